//! Empirical interpolation of the max-nonlinearity and the adaptive
//! RB-DEIM training loop.

use std::io::Write;
use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::discretization::{HighFidelityModel, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::{delta_l, delta_rb_l};
use crate::numerics::{sym_eig_desc, EIGEN_DIMENSION_CAP, RANK_TOLERANCE};
use crate::problem::Parameter;
use crate::reduction::{
    argmax_first, pod1, projection_error_snapshots, FeCache, RBBasis, StagnationGuard,
};
use crate::solvers::{fe_solve, DeimReducedModel, NewtonSettings};

/// Relative energy below which a deflated snapshot direction is treated as
/// round-off.
pub const DEFLATION_FLOOR: f64 = 1e-20;

/// Smallest admissible singular value of `PᵀΦ`.
pub const INTERPOLATION_TOLERANCE: f64 = 1e-12;

/// Orthonormal interpolation basis `Φ` with selected rows `I`.
#[derive(Debug, Clone)]
pub struct DeimData {
    phi: DMatrix<f64>,
    indices: Vec<usize>,
    /// `(PᵀΦ)⁻¹`.
    inverse: DMatrix<f64>,
}

impl DeimData {
    pub fn empty(n: usize) -> Self {
        Self {
            phi: DMatrix::zeros(n, 0),
            indices: Vec::new(),
            inverse: DMatrix::zeros(0, 0),
        }
    }

    /// `Φ = I`, `P = I`.
    pub fn identity(n: usize) -> Self {
        Self {
            phi: DMatrix::identity(n, n),
            indices: (0..n).collect(),
            inverse: DMatrix::identity(n, n),
        }
    }

    /// Validates and assembles interpolation data.
    pub fn from_parts(phi: DMatrix<f64>, indices: Vec<usize>) -> Result<Self> {
        if phi.ncols() != indices.len() {
            return Err(Error::DimensionMismatch {
                expected: phi.ncols(),
                found: indices.len(),
            });
        }
        let mut seen = vec![false; phi.nrows()];
        for &i in &indices {
            if i >= phi.nrows() {
                return Err(Error::InvalidArgument(format!(
                    "interpolation index {i} out of range"
                )));
            }
            if seen[i] {
                return Err(Error::DuplicateDeimIndex(i));
            }
            seen[i] = true;
        }
        let l = indices.len();
        let sampled = DMatrix::from_fn(l, l, |r, j| phi[(indices[r], j)]);
        let smin = if l == 0 {
            f64::INFINITY
        } else {
            sampled.singular_values().min()
        };
        if !(smin > INTERPOLATION_TOLERANCE) {
            return Err(Error::SingularInterpolation(smin));
        }
        let inverse = sampled
            .try_inverse()
            .ok_or(Error::SingularInterpolation(smin))?;
        Ok(Self {
            phi,
            indices,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_dofs(&self) -> usize {
        self.phi.nrows()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `PᵀΦ`.
    pub fn sampled_basis(&self) -> DMatrix<f64> {
        let l = self.len();
        DMatrix::from_fn(l, l, |r, j| self.phi[(self.indices[r], j)])
    }

    /// Largest deviation of `ΦᵀΦ` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let l = self.len();
        (self.phi.transpose() * &self.phi - DMatrix::identity(l, l)).amax()
    }

    /// `Φ(PᵀΦ)⁻¹Pᵀ g`.
    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        if self.is_empty() {
            return DVector::zeros(self.n_dofs());
        }
        let sampled = DVector::from_iterator(self.len(), self.indices.iter().map(|&i| g[i]));
        &self.phi * (&self.inverse * sampled)
    }

    /// Applies the interpolation operator to every column.
    pub fn apply_matrix(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_dofs(),
                found: g.nrows(),
            });
        }
        if self.is_empty() {
            return Ok(DMatrix::zeros(g.nrows(), g.ncols()));
        }
        let sampled = g.select_rows(self.indices.iter());
        Ok(&self.phi * (&self.inverse * sampled))
    }

    /// `A (PᵀΦ)⁻¹`.
    pub fn right_solve(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: a.ncols(),
            });
        }
        Ok(a * &self.inverse)
    }
}

/// Greedy interpolation-point selection for new modes appended to
/// `existing`.
pub fn deim_points(modes: &DMatrix<f64>, existing: &DeimData) -> Result<DeimData> {
    if modes.nrows() != existing.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: existing.n_dofs(),
            found: modes.nrows(),
        });
    }
    let mut phi = existing.phi.clone();
    let mut indices = existing.indices.clone();
    let mut current = existing.clone();
    for mode in modes.column_iter() {
        let mode = mode.into_owned();
        let r = if indices.is_empty() {
            mode.clone()
        } else {
            &mode - current.apply(&mode)
        };
        let mut best = 0;
        for (k, v) in r.iter().enumerate() {
            if v.abs() > r[best].abs() {
                best = k;
            }
        }
        if indices.contains(&best) {
            return Err(Error::DuplicateDeimIndex(best));
        }
        let l = phi.ncols();
        phi = phi.insert_column(l, 0.0);
        phi.set_column(l, &mode);
        indices.push(best);
        current = DeimData::from_parts(phi.clone(), indices.clone())?;
    }
    Ok(current)
}

/// Left singular vectors of `e` by the method of snapshots. Modes are kept
/// while the squared singular value exceeds `rank_tol · reference`, at most
/// `max_modes` of them. Returns the modes and their singular values.
pub fn snapshot_pod(
    e: &DMatrix<f64>,
    max_modes: usize,
    rank_tol: f64,
    reference: Option<f64>,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if e.ncols() == 0 {
        return Ok((DMatrix::zeros(e.nrows(), 0), Vec::new()));
    }
    let mut gram = e.transpose() * e;
    gram = (&gram + gram.transpose()) * 0.5;
    let (values, vectors) = sym_eig_desc(&gram, EIGEN_DIMENSION_CAP)?;
    let scale = reference.unwrap_or(0.0).max(values[0]);
    if !(scale > 0.0) {
        return Ok((DMatrix::zeros(e.nrows(), 0), Vec::new()));
    }
    let rank = values.iter().filter(|&&v| v > rank_tol * scale).count();
    let keep = rank.min(max_modes);
    let mut modes = DMatrix::zeros(e.nrows(), keep);
    let mut sigmas = Vec::with_capacity(keep);
    for j in 0..keep {
        let sigma = values[j].sqrt();
        modes.set_column(j, &(e * vectors.column(j) / sigma));
        sigmas.push(sigma);
    }
    Ok((modes, sigmas))
}

/// Orthonormalizes `modes` against `phi` and among themselves with two
/// passes of modified Gram-Schmidt, dropping columns that vanish.
fn orthonormalize_against(phi: &DMatrix<f64>, modes: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for col in modes.column_iter() {
        let mut v = col.into_owned();
        let original = v.norm();
        for _ in 0..2 {
            for q in phi.column_iter() {
                let d = q.dot(&v);
                v.axpy(-d, &q, 1.0);
            }
            for q in &out {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 * original {
            out.push(v / norm);
        }
    }
    let mut m = DMatrix::zeros(modes.nrows(), out.len());
    for (j, v) in out.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Nonlinearity snapshots `max{0, yᵏ}`, `k = 1 … K`.
pub fn nonlinearity_snapshots(y: &Trajectory) -> DMatrix<f64> {
    y.columns(1, y.ncols() - 1).map(|v| v.max(0.0))
}

/// Outcome of an interpolation update.
#[derive(Debug, Clone)]
pub struct DeimUpdate {
    pub deim: DeimData,
    /// Number of modes added; zero means the trajectory's nonlinearity was
    /// already captured.
    pub added: usize,
}

/// Enlarges `deim` by at most `grow` modes extracted from the part of the
/// trajectory's nonlinearity snapshots not yet represented in `Φ`.
pub fn deim_update(
    deim: &DeimData,
    y: &Trajectory,
    grow: usize,
    rank_tol: f64,
) -> Result<DeimUpdate> {
    if grow < 1 {
        return Err(Error::InvalidArgument(
            "DEIM growth must be at least 1".into(),
        ));
    }
    let e = nonlinearity_snapshots(y);
    let reference = e.column_iter().map(|c| c.norm_squared()).sum::<f64>();
    if reference == 0.0 {
        return Ok(DeimUpdate {
            deim: deim.clone(),
            added: 0,
        });
    }
    let (_, sigmas) = snapshot_pod(&e, 1, 0.0, None)?;
    let lambda_max = sigmas.first().map_or(0.0, |s| s * s);
    let residual = if deim.is_empty() {
        e
    } else {
        &e - &deim.phi * (deim.phi.transpose() * &e)
    };
    let (modes, sigmas) = snapshot_pod(&residual, grow, rank_tol, None)?;
    // Deflation leaves round-off behind once span(Φ) already holds E.
    let kept = sigmas
        .iter()
        .take_while(|&&s| s * s > DEFLATION_FLOOR * lambda_max)
        .count();
    let modes = orthonormalize_against(&deim.phi, &modes.columns(0, kept).into_owned());
    if modes.ncols() == 0 {
        return Ok(DeimUpdate {
            deim: deim.clone(),
            added: 0,
        });
    }
    let added = modes.ncols();
    Ok(DeimUpdate {
        deim: deim_points(&modes, deim)?,
        added,
    })
}

/// Interpolation data from one full-order trajectory with two modes.
pub fn initial_deim(
    model: &HighFidelityModel,
    mu_seed: &[f64],
    newton: &NewtonSettings,
) -> Result<DeimData> {
    let (y, _) = fe_solve(model, mu_seed, newton)?;
    let update = deim_update(&DeimData::empty(model.n_dofs()), &y, 2, RANK_TOLERANCE)?;
    if update.added == 0 {
        return Err(Error::ZeroSnapshots);
    }
    Ok(update.deim)
}

/// Training parameter closest to the box midpoint whose source does not
/// vanish identically.
pub fn seed_parameter(model: &HighFidelityModel, train: &[Parameter]) -> Result<Parameter> {
    let mid = model.problem.set.midpoint();
    let mut best: Option<(f64, &Parameter)> = None;
    for mu in train {
        if model.load_data(mu)?.is_zero() {
            continue;
        }
        let d: f64 = mu.iter().zip(&mid).map(|(a, b)| (a - b).powi(2)).sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, mu));
        }
    }
    best.map(|(_, mu)| mu.clone()).ok_or(Error::ZeroSnapshots)
}

/// Classical offline interpolation basis from full-order trajectories over
/// `train`. Snapshots are compressed incrementally so the full snapshot
/// matrix is never formed.
pub fn classical_deim_offline(
    model: &HighFidelityModel,
    train: &[Parameter],
    size: usize,
    newton: &NewtonSettings,
) -> Result<DeimData> {
    if size < 1 {
        return Err(Error::InvalidArgument(
            "DEIM size must be at least 1".into(),
        ));
    }
    let cap = (3 * size).max(size + 50);
    let n = model.n_dofs();
    let mut compressed = DMatrix::<f64>::zeros(n, 0);
    let mut reference = 0.0f64;
    for mu in train {
        let (y, _) = fe_solve(model, mu, newton)?;
        let e = nonlinearity_snapshots(&y);
        let stacked = DMatrix::from_fn(n, compressed.ncols() + e.ncols(), |i, j| {
            if j < compressed.ncols() {
                compressed[(i, j)]
            } else {
                e[(i, j - compressed.ncols())]
            }
        });
        let (modes, sigmas) = snapshot_pod(&stacked, cap, 0.0, None)?;
        if let Some(s) = sigmas.first() {
            reference = reference.max(s * s);
        }
        let mut next = modes;
        for (j, s) in sigmas.iter().enumerate() {
            next.column_mut(j).scale_mut(*s);
        }
        compressed = next;
    }
    if compressed.ncols() == 0 {
        return Err(Error::ZeroSnapshots);
    }
    let (modes, _) = snapshot_pod(&compressed, size, RANK_TOLERANCE, Some(reference))?;
    let modes = orthonormalize_against(&DMatrix::zeros(n, 0), &modes);
    if modes.ncols() == 0 {
        return Err(Error::ZeroSnapshots);
    }
    deim_points(&modes, &DeimData::empty(n))
}

/// `max(1, ⌊log₁₀(ε₂/ε_L)⌋)`.
pub fn deim_growth(eps2: f64, tol_l: f64) -> usize {
    let v = (eps2 / tol_l).log10().floor();
    if v.is_finite() && v >= 1.0 {
        v as usize
    } else {
        1
    }
}

/// Settings of the adaptive loop.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveSettings {
    pub newton: NewtonSettings,
    pub rank_tolerance: f64,
    pub max_basis: usize,
    pub max_deim: usize,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        Self {
            newton: NewtonSettings::default(),
            rank_tolerance: RANK_TOLERANCE,
            max_basis: 200,
            max_deim: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRecord {
    pub iteration: usize,
    pub mu: Parameter,
    pub eps_rb: f64,
    pub eps_deim: f64,
    pub basis_size: usize,
    pub deim_size: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptiveTrace {
    pub records: Vec<AdaptiveRecord>,
}

impl AdaptiveTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "iteration,mu,delta_rb_l,delta_l,delta_max,basis_size,deim_size,seconds"
        )?;
        for r in &self.records {
            let mu: Vec<String> = r.mu.iter().map(|v| v.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iteration,
                mu.join(";"),
                r.eps_rb,
                r.eps_deim,
                r.eps_rb + r.eps_deim,
                r.basis_size,
                r.deim_size,
                r.seconds
            )?;
        }
        Ok(())
    }
}

/// `(Δ_rb,L(μ), Δ_L(μ))` over the training set.
fn sweep(
    model: &HighFidelityModel,
    train: &[Parameter],
    basis: &RBBasis,
    deim: &DeimData,
    newton: &NewtonSettings,
    c_p: f64,
) -> Result<Vec<(f64, f64)>> {
    let reduced = DeimReducedModel::new(model, basis, deim)?;
    train
        .par_iter()
        .map(|mu| {
            let (rb, _) = reduced.solve(mu, newton)?;
            let y = rb.lift(basis);
            Ok((
                delta_rb_l(model, mu, &y, deim)?,
                delta_l(model, mu, &y, deim, c_p),
            ))
        })
        .collect()
}

/// Adaptive POD-greedy training of reduced and interpolation bases.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_rb_deim(
    model: &HighFidelityModel,
    train: &[Parameter],
    tol: f64,
    tol_rb: f64,
    tol_l: f64,
    initial: DeimData,
    settings: &AdaptiveSettings,
) -> Result<(RBBasis, DeimData, AdaptiveTrace)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if !(tol_rb > 0.0 && tol_l > 0.0) || !(tol >= tol_rb + tol_l) {
        return Err(Error::InvalidArgument(
            "tolerances must satisfy tol >= tol_rb + tol_l with positive parts".into(),
        ));
    }
    for mu in train {
        model.problem.set.check(mu)?;
    }
    let mut basis = RBBasis::empty(&model.ops);
    let mut deim = initial;
    let mut trace = AdaptiveTrace::default();
    if tol.is_infinite() {
        return Ok((basis, deim, trace));
    }
    let start = Instant::now();
    let c_p = model.poincare_constant();
    let mut cache = FeCache::new(model, train.len(), settings.newton);
    let mut guard = StagnationGuard::default();
    for iteration in 0.. {
        let values = sweep(model, train, &basis, &deim, &settings.newton, c_p)?;
        let totals: Vec<f64> = values.iter().map(|(a, b)| a + b).collect();
        let (best, total) = argmax_first(&totals);
        let (eps1, eps2) = values[best];
        trace.records.push(AdaptiveRecord {
            iteration,
            mu: train[best].clone(),
            eps_rb: eps1,
            eps_deim: eps2,
            basis_size: basis.dim(),
            deim_size: deim.len(),
            seconds: start.elapsed().as_secs_f64(),
        });
        info!(
            "adaptive iteration {iteration}: {eps1:e} + {eps2:e} at {} (sizes {}, {})",
            train[best],
            basis.dim(),
            deim.len()
        );
        if total <= tol {
            break;
        }
        guard.observe(iteration, total)?;
        if basis.dim() >= settings.max_basis || deim.len() >= settings.max_deim {
            return Err(Error::Stagnation {
                iterations: iteration,
                value: total,
            });
        }
        let y = cache.get(best, &train[best])?;
        if eps1 > tol_rb {
            let snapshots = projection_error_snapshots(&basis, &y);
            basis.extend(&pod1(&snapshots, &model.ops)?)?;
        }
        let grow = deim_growth(eps2, tol_l);
        deim = deim_update(&deim, &y, grow, settings.rank_tolerance)?.deim;
        if deim.len() < basis.dim() {
            deim = deim_update(&deim, &y, basis.dim() - deim.len(), settings.rank_tolerance)?.deim;
        }
    }
    Ok((basis, deim, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthonormal(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        a.qr().q()
    }

    fn unit(n: usize, i: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, 1);
        m[(i, 0)] = 1.0;
        m
    }

    #[test]
    fn canonical_points() {
        let d = deim_points(&unit(6, 3), &DeimData::empty(6)).unwrap();
        assert_eq!(d.indices(), &[3]);
        let mut two = DMatrix::zeros(5, 2);
        two[(1, 0)] = 1.0;
        two[(2, 1)] = 1.0;
        let d = deim_points(&two, &DeimData::empty(5)).unwrap();
        assert_eq!(d.indices(), &[1, 2]);
    }

    /// Straightforward re-implementation with explicit dense solves.
    fn oracle_points(u: &DMatrix<f64>) -> Vec<usize> {
        let n = u.nrows();
        let mut idx = Vec::new();
        for j in 0..u.ncols() {
            let col = u.column(j).into_owned();
            let r = if j == 0 {
                col
            } else {
                let basis = u.columns(0, j).into_owned();
                let pt = DMatrix::from_fn(j, j, |a, b| basis[(idx[a], b)]);
                let rhs = DVector::from_fn(j, |a, _| col[idx[a]]);
                let c = pt.lu().solve(&rhs).unwrap();
                col - basis * c
            };
            let mut best = 0;
            for k in 1..n {
                if r[k].abs() > r[best].abs() {
                    best = k;
                }
            }
            idx.push(best);
        }
        idx
    }

    #[test]
    fn selection_matches_oracle() {
        for seed in 0..20 {
            let u = random_orthonormal(8, 3, seed);
            let d = deim_points(&u, &DeimData::empty(8)).unwrap();
            assert_eq!(d.indices(), oracle_points(&u).as_slice(), "seed {seed}");
        }
    }

    #[test]
    fn apply_interpolates_and_projects() {
        let u = random_orthonormal(30, 5, 1);
        let d = deim_points(&u, &DeimData::empty(30)).unwrap();
        let inside = &u * DVector::from_vec(vec![1.0, -2.0, 0.3, 4.0, 0.0]);
        assert!((d.apply(&inside) - &inside).amax() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = DVector::from_fn(30, |_, _| rng.gen_range(-1.0..1.0));
        let a = d.apply(&g);
        for &i in d.indices() {
            assert!((a[i] - g[i]).abs() < 1e-10);
        }
        assert!((d.apply(&a) - &a).amax() < 1e-10);
        let id = DeimData::identity(7);
        let g = DVector::from_fn(7, |i, _| i as f64);
        assert_eq!(id.apply(&g), g);
    }

    #[test]
    fn duplicate_index_rejected() {
        let d = deim_points(&unit(4, 0), &DeimData::empty(4)).unwrap();
        assert!(matches!(
            deim_points(&unit(4, 0), &d),
            Err(Error::DuplicateDeimIndex(0))
        ));
    }

    #[test]
    fn growth_rule() {
        assert_eq!(deim_growth(9.0, 1.0), 1);
        assert_eq!(deim_growth(0.5, 1.0), 1);
        assert_eq!(deim_growth(150.0, 1.0), 2);
        assert_eq!(deim_growth(1e-2, 1e-5), 3);
    }

    fn trajectory_from(cols: &[DVector<f64>]) -> Trajectory {
        let n = cols[0].len();
        let mut y = DMatrix::zeros(n, cols.len() + 1);
        for (k, c) in cols.iter().enumerate() {
            y.set_column(k + 1, c);
        }
        y
    }

    #[test]
    fn update_respects_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DVector::from_fn(20, |_, _| rng.gen_range(0.0..1.0));
        let b = DVector::from_fn(20, |_, _| rng.gen_range(0.0..1.0));
        let cols: Vec<DVector<f64>> = (0..10)
            .map(|k| &a * (k as f64) + &b * ((k * k) as f64))
            .collect();
        let y = trajectory_from(&cols);
        let up = deim_update(&DeimData::empty(20), &y, 5, RANK_TOLERANCE).unwrap();
        assert_eq!(up.added, 2);
        assert!(up.deim.orthonormality_defect() < 1e-10);
        let again = deim_update(&up.deim, &y, 3, RANK_TOLERANCE).unwrap();
        assert_eq!(again.added, 0);
        assert_eq!(again.deim.len(), 2);
    }

    #[test]
    fn successive_updates_keep_old_modes_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut deim = DeimData::empty(40);
        for round in 0..4 {
            let cols: Vec<DVector<f64>> = (0..12)
                .map(|_| DVector::from_fn(40, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let y = trajectory_from(&cols);
            let before = deim.phi().clone();
            deim = deim_update(&deim, &y, 3, RANK_TOLERANCE).unwrap().deim;
            assert_eq!(deim.len(), 3 * (round + 1));
            for col in before.column_iter() {
                let c = col.into_owned();
                assert!((deim.apply(&c) - &c).amax() < 1e-10);
            }
            assert!(deim.orthonormality_defect() < 1e-10);
            let smin = deim.sampled_basis().singular_values().min();
            assert!(smin > INTERPOLATION_TOLERANCE);
        }
    }

    #[test]
    fn zero_snapshots_do_not_grow() {
        let y = DMatrix::from_element(5, 4, -1.0);
        let up = deim_update(&DeimData::empty(5), &y, 2, RANK_TOLERANCE).unwrap();
        assert_eq!(up.added, 0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn apply_is_idempotent(seed in 0u64..10_000, m in 1usize..6) {
            let u = random_orthonormal(25, m, seed);
            let d = deim_points(&u, &DeimData::empty(25)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let g = DVector::from_fn(25, |_, _| rng.gen_range(-1.0..1.0));
            let once = d.apply(&g);
            proptest::prop_assert!((d.apply(&once) - &once).amax() < 1e-10);
        }
    }
}
