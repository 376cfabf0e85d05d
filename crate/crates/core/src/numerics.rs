//! Dense and sparse linear algebra used throughout the crate.
//!
//! Sparse symmetric matrices are stored in compressed-row form with the full
//! pattern (both triangles). Factorizations use a fixed-band Cholesky on the
//! natural node ordering, which for the structured meshes built here has
//! half-bandwidth `1/h`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default cap on the dimension of dense symmetric eigenproblems.
pub const EIGEN_DIMENSION_CAP: usize = 2048;

/// Default relative tolerance for [`numerical_rank`].
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Symmetric sparse matrix in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    columns: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds the matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Both `(i, j)` and `(j, i)` must be supplied; use [`Self::is_symmetric`]
    /// to validate hand-built input.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: i.max(j) + 1,
                });
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by_key(|a| (a.0, a.1));

        let mut row_offsets = vec![0usize; n + 1];
        let mut columns = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                columns.push(j);
                values.push(v);
                row_offsets[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n,
            row_offsets,
            columns,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_offsets: (0..=n).collect(),
            columns: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Diagonal matrix with the given entries.
    pub fn from_diagonal(diagonal: &[f64]) -> Self {
        let n = diagonal.len();
        Self {
            n,
            row_offsets: (0..=n).collect(),
            columns: (0..n).collect(),
            values: diagonal.to_vec(),
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        let mut triplets = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                if a[(i, j)] != 0.0 {
                    triplets.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), &triplets)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over the stored `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.columns[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.columns[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Largest stored `|i - j|`.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Max-norm distance to the transpose over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry() <= tol
    }

    /// `y = A x` on raw slices.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.columns[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        self.mul_into(x.as_slice(), y.as_mut_slice());
        y
    }

    /// Applies the matrix to every column of `x`.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for (xc, mut yc) in x.column_iter().zip(y.column_iter_mut()) {
            let xs: Vec<f64> = xc.iter().copied().collect();
            self.mul_into(&xs, yc.as_mut_slice());
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                row += self.values[k] * y[self.columns[k]];
            }
            acc += xi * row;
        }
        acc
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.row_offsets == other.row_offsets && self.columns == other.columns
    }

    /// `Σ wᵢ Aᵢ` for matrices sharing one sparsity pattern.
    pub fn linear_combination(terms: &[(f64, &SparseSymMatrix)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?;
        let mut out = (*first).clone();
        out.values.iter_mut().for_each(|v| *v = 0.0);
        for (w, m) in terms {
            if !m.same_pattern(first) {
                return Err(Error::InvalidArgument(
                    "linear combination of matrices with different patterns".into(),
                ));
            }
            for (o, v) in out.values.iter_mut().zip(&m.values) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Adds `d` to the diagonal; every diagonal entry must be stored.
    pub fn add_diagonal(&mut self, d: &[f64]) -> Result<()> {
        if d.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: d.len(),
            });
        }
        for (i, di) in d.iter().enumerate() {
            let range = self.row_offsets[i]..self.row_offsets[i + 1];
            let pos = self.columns[range.clone()]
                .binary_search(&i)
                .map_err(|_| Error::InvalidArgument(format!("diagonal entry {i} not stored")))?;
            self.values[range.start + pos] += di;
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[(i, j)] += v;
            }
        }
        a
    }

    pub fn factorize(&self) -> Result<SpdFactorization> {
        spd_factorize(self)
    }
}

/// Band Cholesky factor `A = L Lᵀ`.
///
/// Row `i` of `L` is stored in `band[i * (bw + 1)..(i + 1) * (bw + 1)]`,
/// entry `(i, j)` at offset `j + bw - i`.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

/// Cholesky-factorizes a symmetric positive definite matrix.
pub fn spd_factorize(a: &SparseSymMatrix) -> Result<SpdFactorization> {
    let n = a.dim();
    let bw = a.bandwidth();
    let width = bw + 1;
    let mut band = vec![0.0; n * width];
    for i in 0..n {
        for (j, v) in a.row(i) {
            if j <= i {
                band[i * width + j + bw - i] = v;
            }
        }
    }
    for i in 0..n {
        let lo_i = i.saturating_sub(bw);
        for j in lo_i..=i {
            let lo = lo_i.max(j.saturating_sub(bw));
            let row_i = &band[i * width + lo + bw - i..i * width + j + bw - i];
            let row_j = &band[j * width + lo + bw - j..j * width + j + bw - j];
            let dot: f64 = row_i.iter().zip(row_j).map(|(p, q)| p * q).sum();
            let s = band[i * width + j + bw - i] - dot;
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotSpd { index: i, value: s });
                }
                band[i * width + bw] = s.sqrt();
            } else {
                band[i * width + j + bw - i] = s / band[j * width + bw];
            }
        }
    }
    Ok(SpdFactorization { n, bw, band })
}

/// Solves `A x = b` with a precomputed factorization.
pub fn spd_solve(f: &SpdFactorization, b: &DVector<f64>) -> Result<DVector<f64>> {
    f.solve(b)
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        Ok(x)
    }

    /// Overwrites `x` (holding `b`) with `A⁻¹ b`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, width) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * width + lo + bw - i..i * width + bw];
            let dot: f64 = row.iter().zip(&x[lo..i]).map(|(l, v)| l * v).sum();
            x[i] = (x[i] - dot) / self.band[i * width + bw];
        }
        for i in (0..n).rev() {
            let xi = x[i] / self.band[i * width + bw];
            x[i] = xi;
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * width + lo + bw - i..i * width + bw];
            for (xk, l) in x[lo..i].iter_mut().zip(row) {
                *xk -= l * xi;
            }
        }
    }

    /// Solves for every column of `b`.
    pub fn solve_columns(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: b.nrows(),
            });
        }
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        Ok(x)
    }
}

/// Eigen-decomposition of a dense symmetric matrix with eigenvalues sorted
/// in descending order. Columns of the returned matrix are the eigenvectors.
pub fn sym_eig_desc(g: &DMatrix<f64>, cap: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: g.ncols(),
        });
    }
    if n > cap {
        return Err(Error::DimensionCap { dim: n, cap });
    }
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Number of entries above `rel_tol · max(values)`.
pub fn numerical_rank(values: &[f64], rel_tol: f64) -> usize {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > rel_tol * max).count()
}

/// Solves a dense symmetric positive definite system.
pub(crate) fn dense_spd_solve(h: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(h).ok_or(Error::SingularJacobian)?;
    Ok(chol.solve(rhs))
}

/// Solves a general dense square system by LU with partial pivoting.
pub(crate) fn dense_solve(h: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    h.lu().solve(rhs).ok_or(Error::SingularJacobian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        b.transpose() * &b + DMatrix::identity(n, n)
    }

    #[test]
    fn identity_solve() {
        let f = SparseSymMatrix::identity(3).factorize().unwrap();
        let x = spd_solve(&f, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_by_two_solve() {
        let a = SparseSymMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]))
            .unwrap();
        let x = a
            .factorize()
            .unwrap()
            .solve(&DVector::from_vec(vec![3.0, 3.0]))
            .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_round_trip() {
        let dense = random_spd(50, 7);
        let a = SparseSymMatrix::from_dense(&dense).unwrap();
        let f = a.factorize().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x_true = DVector::from_fn(50, |_, _| rng.gen_range(-1.0..1.0));
        let x = f.solve(&(&dense * &x_true)).unwrap();
        assert!((&x - &x_true).norm() <= 1e-10 * x_true.norm());
    }

    #[test]
    fn zero_rhs_and_determinism() {
        let a = SparseSymMatrix::from_dense(&random_spd(12, 1)).unwrap();
        let f = a.factorize().unwrap();
        assert_eq!(f.solve(&DVector::zeros(12)).unwrap(), DVector::zeros(12));
        let b = DVector::from_fn(12, |i, _| (i as f64).sin());
        let x1 = f.solve(&b).unwrap();
        let x2 = f.solve(&b).unwrap();
        assert!(x1
            .iter()
            .zip(x2.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn indefinite_matrix_names_pivot() {
        let a = SparseSymMatrix::from_dense(&DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 2.0, 1.0],
        ))
        .unwrap();
        match a.factorize() {
            Err(Error::NotSpd { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected NotSpd, got {other:?}"),
        }
    }

    #[test]
    fn solve_dimension_mismatch() {
        let f = SparseSymMatrix::identity(3).factorize().unwrap();
        assert!(matches!(
            f.solve(&DVector::zeros(4)),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn eig_diagonal() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (vals, vecs) = sym_eig_desc(&g, EIGEN_DIMENSION_CAP).unwrap();
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        assert!((vecs.transpose() * &vecs - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn eig_rank_one() {
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let g = &w * w.transpose();
        let (vals, _) = sym_eig_desc(&g, EIGEN_DIMENSION_CAP).unwrap();
        assert!((vals[0] - w.norm_squared()).abs() < 1e-12);
        assert!(vals.iter().skip(1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn eig_reconstruction() {
        let g = random_spd(20, 3);
        let (vals, vecs) = sym_eig_desc(&g, EIGEN_DIMENSION_CAP).unwrap();
        let rebuilt = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((rebuilt - &g).amax() <= 1e-9 * g.amax());
        assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eig_respects_cap() {
        let g = DMatrix::<f64>::identity(5, 5);
        assert!(matches!(
            sym_eig_desc(&g, 4),
            Err(Error::DimensionCap { dim: 5, cap: 4 })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&[1.0, 1e-3, 1e-14], 1e-10), 2);
        assert_eq!(numerical_rank(&[0.0, 0.0], 1e-10), 0);
        assert_eq!(numerical_rank(&[5.0, 4.0, 3.0, 2.0, 1.0], 1e-10), 5);
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a =
            SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 2);
    }

    proptest::proptest! {
        #[test]
        fn solve_residual_small(seed in 0u64..1000, n in 1usize..30) {
            let dense = random_spd(n, seed);
            let a = SparseSymMatrix::from_dense(&dense).unwrap();
            let b = DVector::from_fn(n, |i, _| ((i + 1) as f64 * seed as f64).cos());
            let x = a.factorize().unwrap().solve(&b).unwrap();
            proptest::prop_assert!((a.mul_vec(&x) - &b).norm() <= 1e-10 * b.norm().max(1e-300));
        }
    }
}
