//! V-orthonormal reduced bases, rank-one POD and the POD-greedy loop.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::deim::DeimData;
use crate::discretization::{time_average, FEOperators, HighFidelityModel, Trajectory, Weight};
use crate::error::{Error, Result};
use crate::estimators::{delta_l, delta_rb_l, ResidualVectors};
use crate::numerics::{sym_eig_desc, SparseSymMatrix, EIGEN_DIMENSION_CAP};
use crate::problem::Parameter;
use crate::solvers::{fe_solve, DeimReducedModel, NewtonSettings, ReducedModel};

/// Relative threshold below which an orthogonalized mode counts as redundant.
pub const REDUNDANCY_TOLERANCE: f64 = 1e-12;

/// Number of consecutive non-decreasing maxima tolerated before a training
/// loop reports stagnation.
pub const STAGNATION_WINDOW: usize = 5;

/// Columns `ψ₁ … ψ_ℓ` orthonormal in the stiffness inner product.
#[derive(Debug, Clone)]
pub struct RBBasis {
    psi: DMatrix<f64>,
    v_psi: DMatrix<f64>,
    stiffness: Arc<SparseSymMatrix>,
}

impl RBBasis {
    pub fn empty(ops: &FEOperators) -> Self {
        let n = ops.n_dofs();
        Self {
            psi: DMatrix::zeros(n, 0),
            v_psi: DMatrix::zeros(n, 0),
            stiffness: ops.stiffness.clone(),
        }
    }

    /// Orthonormalizes the columns of `vectors` one by one.
    pub fn from_vectors(ops: &FEOperators, vectors: &DMatrix<f64>) -> Result<Self> {
        let mut basis = Self::empty(ops);
        for col in vectors.column_iter() {
            basis.extend(&col.into_owned())?;
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n_dofs(&self) -> usize {
        self.psi.nrows()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// `VΨ`.
    pub fn v_psi(&self) -> &DMatrix<f64> {
        &self.v_psi
    }

    /// `ΨᵀVΨ`, the identity up to rounding.
    pub fn gram(&self) -> DMatrix<f64> {
        self.psi.transpose() * &self.v_psi
    }

    /// V-orthogonal projection `Ψ Ψᵀ V v`.
    pub fn project_v(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(v.len());
        }
        &self.psi * (self.v_psi.transpose() * v)
    }

    /// Projects every column of `y`.
    pub fn project_columns(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        if self.dim() == 0 {
            return DMatrix::zeros(y.nrows(), y.ncols());
        }
        &self.psi * (self.v_psi.transpose() * y)
    }

    /// Appends the V-normalized component of `psi_new` orthogonal to the
    /// current span, orthogonalizing twice.
    pub fn extend(&mut self, psi_new: &DVector<f64>) -> Result<()> {
        if psi_new.len() != self.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_dofs(),
                found: psi_new.len(),
            });
        }
        let scale = self.stiffness.quad_form(psi_new.as_slice()).max(0.0).sqrt();
        if !(scale > 0.0) {
            return Err(Error::RedundantMode(scale));
        }
        let mut r = psi_new / scale;
        for _ in 0..2 {
            r -= self.project_v(&r);
        }
        let norm = self.stiffness.quad_form(r.as_slice()).max(0.0).sqrt();
        if norm < REDUNDANCY_TOLERANCE {
            return Err(Error::RedundantMode(norm));
        }
        r /= norm;
        let vr = self.stiffness.mul_vec(&r);
        let l = self.dim();
        self.psi = self.psi.clone().insert_column(l, 0.0);
        self.psi.set_column(l, &r);
        self.v_psi = self.v_psi.clone().insert_column(l, 0.0);
        self.v_psi.set_column(l, &vr);
        Ok(())
    }

    /// Restricts to the first `l` columns.
    pub fn truncated(&self, l: usize) -> Self {
        Self {
            psi: self.psi.columns(0, l).into_owned(),
            v_psi: self.v_psi.columns(0, l).into_owned(),
            stiffness: self.stiffness.clone(),
        }
    }

    /// Rebuilds a basis from stored columns, checking orthonormality.
    pub fn from_orthonormal(ops: &FEOperators, psi: DMatrix<f64>) -> Result<Self> {
        if psi.nrows() != ops.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: ops.n_dofs(),
                found: psi.nrows(),
            });
        }
        let v_psi = ops.stiffness.mul_mat(&psi);
        let basis = Self {
            psi,
            v_psi,
            stiffness: ops.stiffness.clone(),
        };
        let dev = (basis.gram() - DMatrix::identity(basis.dim(), basis.dim())).amax();
        if dev > 1e-8 {
            return Err(Error::Format(format!(
                "basis is not V-orthonormal (deviation {dev:e})"
            )));
        }
        Ok(basis)
    }
}

/// Dominant POD mode of the snapshot columns in the V inner product.
pub fn pod1(snapshots: &DMatrix<f64>, ops: &FEOperators) -> Result<DVector<f64>> {
    if snapshots.ncols() == 0 {
        return Err(Error::ZeroSnapshots);
    }
    let vs = ops.stiffness.mul_mat(snapshots);
    let mut gram = snapshots.transpose() * &vs;
    gram = (&gram + gram.transpose()) * 0.5;
    let (values, vectors) = sym_eig_desc(&gram, EIGEN_DIMENSION_CAP)?;
    let lambda = values[0];
    if !(lambda > 0.0) {
        return Err(Error::ZeroSnapshots);
    }
    let mut psi = snapshots * vectors.column(0) / lambda.sqrt();
    let norm = ops.stiffness.quad_form(psi.as_slice()).sqrt();
    psi /= norm;
    Ok(psi)
}

/// Quantity maximized over the training set.
#[derive(Debug, Clone, Copy)]
pub enum GreedyMode<'d> {
    /// `‖P^δ e‖_Y` against cached full-order solutions.
    TrueError,
    /// Residual-based bound of the reduced-basis error.
    Estimator,
    /// Interpolated residual bound plus interpolation error with a fixed
    /// interpolation basis.
    DeimEstimator(&'d DeimData),
}

/// Settings of the greedy training loops.
#[derive(Debug, Clone, Copy)]
pub struct GreedySettings {
    pub newton: NewtonSettings,
    /// Hard cap on the basis size.
    pub max_basis: usize,
}

impl Default for GreedySettings {
    fn default() -> Self {
        Self {
            newton: NewtonSettings::default(),
            max_basis: 200,
        }
    }
}

/// One greedy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyRecord {
    pub iteration: usize,
    pub mu: Parameter,
    pub delta_max: f64,
    pub basis_size: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GreedyTrace {
    pub records: Vec<GreedyRecord>,
    /// Parameters whose snapshots entered the basis, in order.
    pub selected: Vec<Parameter>,
}

impl GreedyTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,mu,delta_max,basis_size,seconds")?;
        for r in &self.records {
            let mu: Vec<String> = r.mu.iter().map(|v| v.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration,
                mu.join(";"),
                r.delta_max,
                r.basis_size,
                r.seconds
            )?;
        }
        Ok(())
    }
}

/// Index of the first maximum.
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 || (best.1.is_nan() && !v.is_nan()) {
            best = (i, v);
        }
    }
    best
}

/// Tracks consecutive non-decreasing maxima.
#[derive(Debug, Default)]
pub(crate) struct StagnationGuard {
    last: Option<f64>,
    count: usize,
}

impl StagnationGuard {
    pub(crate) fn observe(&mut self, iteration: usize, value: f64) -> Result<()> {
        if let Some(last) = self.last {
            if value >= last {
                self.count += 1;
            } else {
                self.count = 0;
            }
        }
        self.last = Some(value);
        if self.count >= STAGNATION_WINDOW {
            return Err(Error::Stagnation {
                iterations: iteration,
                value,
            });
        }
        Ok(())
    }
}

/// Full-order solutions cached by training index.
pub(crate) struct FeCache<'m> {
    model: &'m HighFidelityModel,
    newton: NewtonSettings,
    entries: Vec<Option<Arc<Trajectory>>>,
}

impl<'m> FeCache<'m> {
    pub(crate) fn new(model: &'m HighFidelityModel, size: usize, newton: NewtonSettings) -> Self {
        Self {
            model,
            newton,
            entries: vec![None; size],
        }
    }

    pub(crate) fn get(&mut self, index: usize, mu: &[f64]) -> Result<Arc<Trajectory>> {
        if let Some(y) = &self.entries[index] {
            return Ok(y.clone());
        }
        let (y, _) = fe_solve(self.model, mu, &self.newton)?;
        let y = Arc::new(y);
        self.entries[index] = Some(y.clone());
        Ok(y)
    }

    pub(crate) fn fill_all(&mut self, train: &[Parameter]) -> Result<()> {
        let missing: Vec<usize> = (0..train.len())
            .filter(|&i| self.entries[i].is_none())
            .collect();
        let solved: Vec<(usize, Trajectory)> = missing
            .par_iter()
            .map(|&i| fe_solve(self.model, &train[i], &self.newton).map(|(y, _)| (i, y)))
            .collect::<Result<_>>()?;
        for (i, y) in solved {
            self.entries[i] = Some(Arc::new(y));
        }
        Ok(())
    }

    pub(crate) fn cached(&self, index: usize) -> Option<&Arc<Trajectory>> {
        self.entries[index].as_ref()
    }
}

/// `‖P^δ(y_δ − Ψ y_rb)‖_Y`.
pub fn projected_error_norm(ops: &FEOperators, fe: &Trajectory, reduced: &Trajectory) -> f64 {
    let avg = time_average(&(fe - reduced));
    crate::discretization::piecewise_constant_norm(ops, Weight::Stiffness, &avg)
}

/// Projection-error snapshots `y^k − P^ℓ y^k`, `k = 1 … K`.
pub fn projection_error_snapshots(basis: &RBBasis, y: &Trajectory) -> DMatrix<f64> {
    let cols = y.columns(1, y.ncols() - 1).into_owned();
    let proj = basis.project_columns(&cols);
    cols - proj
}

/// POD-greedy training of a reduced basis.
pub fn greedy_rb(
    model: &HighFidelityModel,
    train: &[Parameter],
    tolerance: f64,
    mode: GreedyMode<'_>,
    settings: &GreedySettings,
) -> Result<(RBBasis, GreedyTrace)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(
            "greedy tolerance must be positive".into(),
        ));
    }
    for mu in train {
        model.problem.set.check(mu)?;
    }
    let mut basis = RBBasis::empty(&model.ops);
    let mut trace = GreedyTrace::default();
    if tolerance.is_infinite() {
        return Ok((basis, trace));
    }
    let start = Instant::now();
    let mut cache = FeCache::new(model, train.len(), settings.newton);
    if matches!(mode, GreedyMode::TrueError) {
        cache.fill_all(train)?;
    }
    let mut guard = StagnationGuard::default();
    for iteration in 0.. {
        let deltas: Vec<f64> = match mode {
            GreedyMode::TrueError => {
                let reduced = ReducedModel::new(model, &basis);
                let fe: Vec<Arc<Trajectory>> = (0..train.len())
                    .map(|i| cache.cached(i).unwrap().clone())
                    .collect();
                train
                    .par_iter()
                    .zip(fe.par_iter())
                    .map(|(mu, y)| {
                        let (rb, _) = reduced.solve(mu, &settings.newton)?;
                        Ok(projected_error_norm(&model.ops, y, &rb.lift(&basis)))
                    })
                    .collect::<Result<_>>()?
            }
            GreedyMode::Estimator => {
                let reduced = ReducedModel::new(model, &basis);
                train
                    .par_iter()
                    .map(|mu| {
                        let (rb, _) = reduced.solve(mu, &settings.newton)?;
                        let y = rb.lift(&basis);
                        Ok(ResidualVectors::rb(model, mu, &y)?.delta(model, mu))
                    })
                    .collect::<Result<_>>()?
            }
            GreedyMode::DeimEstimator(deim) => {
                let reduced = DeimReducedModel::new(model, &basis, deim)?;
                let c_p = model.poincare_constant();
                train
                    .par_iter()
                    .map(|mu| {
                        let (rb, _) = reduced.solve(mu, &settings.newton)?;
                        let y = rb.lift(&basis);
                        Ok(delta_rb_l(model, mu, &y, deim)? + delta_l(model, mu, &y, deim, c_p))
                    })
                    .collect::<Result<_>>()?
            }
        };
        let (best, max) = argmax_first(&deltas);
        trace.records.push(GreedyRecord {
            iteration,
            mu: train[best].clone(),
            delta_max: max,
            basis_size: basis.dim(),
            seconds: start.elapsed().as_secs_f64(),
        });
        info!(
            "greedy iteration {iteration}: max {max:e} at {} (size {})",
            train[best],
            basis.dim()
        );
        if max <= tolerance {
            break;
        }
        guard.observe(iteration, max)?;
        if basis.dim() >= settings.max_basis.min(model.n_dofs()) {
            return Err(Error::Stagnation {
                iterations: iteration,
                value: max,
            });
        }
        let y = cache.get(best, &train[best])?;
        let snapshots = projection_error_snapshots(&basis, &y);
        let psi = pod1(&snapshots, &model.ops)?;
        basis.extend(&psi)?;
        trace.selected.push(train[best].clone());
    }
    Ok((basis, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::make_time_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops(n: usize) -> FEOperators {
        FEOperators::new(n, make_time_grid(1.0, 4).unwrap()).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn pod1_single_snapshot() {
        let ops = ops(5);
        let s = random_matrix(16, 1, 1);
        let psi = pod1(&s, &ops).unwrap();
        let norm = ops.stiffness.quad_form(s.as_slice()).sqrt();
        let expected = s.column(0) / norm;
        let sign = psi.dot(&expected).signum();
        assert!((psi * sign - expected).amax() < 1e-12);
    }

    #[test]
    fn pod1_two_orthogonal_snapshots() {
        let ops = ops(5);
        let mut basis = RBBasis::empty(&ops);
        basis
            .extend(&random_matrix(16, 1, 2).column(0).into_owned())
            .unwrap();
        basis
            .extend(&random_matrix(16, 1, 3).column(0).into_owned())
            .unwrap();
        let a = basis.psi().column(0) * 2.0;
        let b = basis.psi().column(1).into_owned();
        let mut s = DMatrix::zeros(16, 2);
        s.set_column(0, &a);
        s.set_column(1, &b);
        let psi = pod1(&s, &ops).unwrap();
        let target = &a / 2.0;
        let sign = psi.dot(&target).signum();
        assert!((psi * sign - target).amax() < 1e-10);
    }

    #[test]
    fn pod1_matches_weighted_svd() {
        let ops = ops(9);
        let n = ops.n_dofs();
        let s = random_matrix(n, 20, 4);
        let psi = pod1(&s, &ops).unwrap();
        // Oracle: leading left singular vector of V^{1/2} S.
        let v = ops.stiffness.to_dense();
        let eig = nalgebra::SymmetricEigen::new(v.clone());
        let root = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let svd = (&root * &s).svd(true, false);
        let (imax, _) = svd.singular_values.argmax();
        let u = svd.u.unwrap().column(imax).into_owned();
        let oracle = root.clone().lu().solve(&u).unwrap();
        let sign = psi.dot(&oracle).signum();
        assert!((psi * sign - oracle).amax() < 1e-9);
    }

    #[test]
    fn pod1_rejects_zero() {
        let ops = ops(4);
        assert!(matches!(
            pod1(&DMatrix::zeros(9, 3), &ops),
            Err(Error::ZeroSnapshots)
        ));
    }

    #[test]
    fn projection_properties() {
        let ops = ops(6);
        let n = ops.n_dofs();
        let empty = RBBasis::empty(&ops);
        let v = random_matrix(n, 1, 5).column(0).into_owned();
        assert_eq!(empty.project_v(&v), DVector::zeros(n));
        let basis = RBBasis::from_vectors(&ops, &random_matrix(n, 4, 6)).unwrap();
        let inside = basis.psi() * DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert!((basis.project_v(&inside) - &inside).amax() < 1e-10);
        let p = basis.project_v(&v);
        let r = &v - &p;
        assert!((basis.v_psi().transpose() * &r).amax() < 1e-10);
        let q = |x: &DVector<f64>| ops.stiffness.quad_form(x.as_slice());
        assert!((q(&v) - q(&p) - q(&r)).abs() < 1e-10 * q(&v));
        assert!((basis.project_v(&p) - &p).amax() < 1e-10);
    }

    #[test]
    fn extension_properties() {
        let ops = ops(8);
        let n = ops.n_dofs();
        let mut basis = RBBasis::empty(&ops);
        let first = random_matrix(n, 1, 7).column(0).into_owned();
        basis.extend(&first).unwrap();
        let norm = ops.stiffness.quad_form(first.as_slice()).sqrt();
        assert!((basis.psi().column(0) - &first / norm).amax() < 1e-12);
        for seed in 0..9 {
            basis
                .extend(&random_matrix(n, 1, 100 + seed).column(0).into_owned())
                .unwrap();
        }
        assert!((basis.gram() - DMatrix::identity(10, 10)).amax() < 1e-10);
        let dup = basis.psi() * DVector::from_fn(10, |i, _| i as f64 - 3.0);
        assert!(matches!(basis.extend(&dup), Err(Error::RedundantMode(_))));
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), (1, 3.0));
    }

    #[test]
    fn stagnation_guard_trips() {
        let mut g = StagnationGuard::default();
        for i in 0..5 {
            g.observe(i, 1.0).unwrap();
        }
        assert!(matches!(g.observe(5, 1.0), Err(Error::Stagnation { .. })));
        let mut g = StagnationGuard::default();
        for i in 0..20 {
            g.observe(i, 1.0 / (i + 1) as f64).unwrap();
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn pod1_is_rank_one_optimal(seed in 0u64..10_000) {
            let ops = ops(5);
            let s = random_matrix(16, 6, seed);
            let psi = pod1(&s, &ops).unwrap();
            let vs = ops.stiffness.mul_mat(&s);
            let loss = |phi: &DVector<f64>| -> f64 {
                let total: f64 = s.column_iter().zip(vs.column_iter()).map(|(c, vc)| c.dot(&vc)).sum();
                let captured: f64 = vs.column_iter().map(|vc| vc.dot(phi).powi(2)).sum();
                total - captured
            };
            let best = loss(&psi);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            for _ in 0..100 {
                let mut phi = DVector::from_fn(16, |_, _| rng.gen_range(-1.0..1.0));
                phi /= ops.stiffness.quad_form(phi.as_slice()).sqrt();
                proptest::prop_assert!(best <= loss(&phi) + 1e-10);
            }
        }
    }
}
