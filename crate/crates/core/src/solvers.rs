//! Semismooth Newton time stepping for the full, reduced and
//! reduced-with-interpolation Crank-Nicolson systems.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::deim::DeimData;
use crate::discretization::{HighFidelityModel, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{dense_solve, dense_spd_solve, SparseSymMatrix, SpdFactorization};
use crate::reduction::RBBasis;

/// Stopping rule `‖G‖₂ ≤ tolerance · (1 + ‖Fᵏ‖₂)` and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations < 1 {
            return Err(Error::InvalidArgument(
                "Newton tolerance must be positive and max iterations at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: Vec<usize>,
    pub seconds: f64,
    pub steps: usize,
    pub factorizations: usize,
}

impl SolveStats {
    pub fn median_iterations(&self) -> usize {
        let mut it = self.iterations.clone();
        it.sort_unstable();
        it.get(it.len() / 2).copied().unwrap_or(0)
    }
}

/// A nonlinear system `G(y) = 0` with a generalized derivative.
pub trait NewtonSystem {
    fn residual(&mut self, y: &DVector<f64>) -> DVector<f64>;
    /// Returns `H(y)⁻¹ rhs`.
    fn solve_jacobian(&mut self, y: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Full-step semismooth Newton iteration. Returns the root and the number
/// of Newton updates performed.
pub fn semismooth_newton<S: NewtonSystem>(
    system: &mut S,
    start: DVector<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(DVector<f64>, usize)> {
    let mut y = start;
    let mut iterations = 0;
    loop {
        let g = system.residual(&y);
        let norm = g.norm();
        if norm <= tolerance {
            return Ok((y, iterations));
        }
        if iterations >= max_iterations || !norm.is_finite() {
            return Err(Error::NewtonDivergence {
                iterations,
                residual: norm,
            });
        }
        let step = system.solve_jacobian(&y, &g)?;
        y -= step;
        iterations += 1;
    }
}

/// Closure-backed system with a dense symmetric positive definite Jacobian.
pub struct FnSystem<R, J> {
    pub residual: R,
    pub jacobian: J,
}

impl<R, J> NewtonSystem for FnSystem<R, J>
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    fn residual(&mut self, y: &DVector<f64>) -> DVector<f64> {
        (self.residual)(y)
    }

    fn solve_jacobian(&mut self, y: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        dense_spd_solve((self.jacobian)(y), rhs)
    }
}

fn positive_part(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

/// Crank-Nicolson residual `G_δ^k(yᵏ)` of one full-order step.
#[allow(clippy::too_many_arguments)]
pub fn fe_step_residual(
    model: &HighFidelityModel,
    mu: &[f64],
    dt: f64,
    y_prev: &DVector<f64>,
    y: &DVector<f64>,
    f_prev: &DVector<f64>,
    f: &DVector<f64>,
) -> DVector<f64> {
    let ops = &model.ops;
    let (c, a) = (model.c(mu), model.a(mu));
    let lumped = DVector::from_column_slice(&ops.lumped);
    let sum = y + y_prev;
    let nonlinear = lumped.component_mul(&(positive_part(y) + positive_part(y_prev)));
    ops.mass.mul_vec(&(y - y_prev)) / dt
        + (ops.stiffness.mul_vec(&sum) * c + nonlinear * a - (f + f_prev)) * 0.5
}

/// Newton matrix `H_δ^k(y) = M/Δt + ½(cV + aM̃Θ(y))`.
pub fn fe_step_jacobian(
    model: &HighFidelityModel,
    mu: &[f64],
    dt: f64,
    y: &DVector<f64>,
) -> SparseSymMatrix {
    let ops = &model.ops;
    let (c, a) = (model.c(mu), model.a(mu));
    let mut h =
        SparseSymMatrix::linear_combination(&[(1.0 / dt, &ops.mass), (0.5 * c, &ops.stiffness)])
            .expect("mass and stiffness share a pattern");
    let d: Vec<f64> = y
        .iter()
        .zip(ops.lumped.iter())
        .map(|(v, m)| if *v > 0.0 { 0.5 * a * m } else { 0.0 })
        .collect();
    h.add_diagonal(&d).expect("diagonal stored");
    h
}

/// One full-order step written as `B y + ½ a M̃ max{0,y} − rhs`.
struct FeStep<'a> {
    dt: f64,
    base: &'a SparseSymMatrix,
    half_a_lumped: &'a [f64],
    rhs: DVector<f64>,
    cache: &'a mut FactorCache,
    scratch: DVector<f64>,
}

#[derive(Default)]
struct FactorCache {
    key: Option<(u64, Vec<bool>)>,
    factor: Option<Arc<SpdFactorization>>,
    count: usize,
}

impl NewtonSystem for FeStep<'_> {
    fn residual(&mut self, y: &DVector<f64>) -> DVector<f64> {
        self.base
            .mul_into(y.as_slice(), self.scratch.as_mut_slice());
        let mut g = self.scratch.clone();
        for ((gi, yi), w) in g.iter_mut().zip(y.iter()).zip(self.half_a_lumped) {
            *gi += w * yi.max(0.0);
        }
        g - &self.rhs
    }

    fn solve_jacobian(&mut self, y: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let active: Vec<bool> = y.iter().map(|v| *v > 0.0).collect();
        let key = (self.dt.to_bits(), active);
        if self.cache.key.as_ref() != Some(&key) {
            let mut h = self.base.clone();
            let d: Vec<f64> = key
                .1
                .iter()
                .zip(self.half_a_lumped)
                .map(|(on, w)| if *on { *w } else { 0.0 })
                .collect();
            h.add_diagonal(&d)?;
            self.cache.factor = Some(Arc::new(h.factorize()?));
            self.cache.key = Some(key);
            self.cache.count += 1;
        }
        let mut x = rhs.clone();
        self.cache
            .factor
            .as_ref()
            .expect("factor present")
            .solve_in_place(x.as_mut_slice());
        Ok(x)
    }
}

fn step_error(step: usize, mu: &[f64], source: Error) -> Error {
    Error::TimeStep {
        step,
        mu: mu.to_vec(),
        source: Box::new(source),
    }
}

/// Full-order trajectory for one parameter.
pub fn fe_solve(
    model: &HighFidelityModel,
    mu: &[f64],
    settings: &NewtonSettings,
) -> Result<(Trajectory, SolveStats)> {
    settings.validate()?;
    let start = Instant::now();
    let loads = model.load_data(mu)?;
    let ops = &model.ops;
    let n = ops.n_dofs();
    let steps = ops.steps();
    let (c, a) = (model.c(mu), model.a(mu));
    let half_a_lumped: Vec<f64> = ops.lumped.iter().map(|m| 0.5 * a * m).collect();
    let mut y = DMatrix::zeros(n, steps + 1);
    let mut stats = SolveStats {
        steps,
        ..Default::default()
    };
    let mut cache = FactorCache::default();
    let mut bases: Vec<(f64, SparseSymMatrix, SparseSymMatrix)> = Vec::new();
    let load_norm = loads.spatial.norm();
    let mut prev = DVector::zeros(n);
    let mut tmp = DVector::zeros(n);
    for k in 1..=steps {
        let dt = ops.grid.dt(k);
        let idx = match bases.iter().position(|(d, _, _)| *d == dt) {
            Some(i) => i,
            None => {
                let plus = SparseSymMatrix::linear_combination(&[
                    (1.0 / dt, &ops.mass),
                    (0.5 * c, &ops.stiffness),
                ])?;
                let minus = SparseSymMatrix::linear_combination(&[
                    (1.0 / dt, &ops.mass),
                    (-0.5 * c, &ops.stiffness),
                ])?;
                bases.push((dt, plus, minus));
                bases.len() - 1
            }
        };
        let (_, base, explicit) = &bases[idx];
        explicit.mul_into(prev.as_slice(), tmp.as_mut_slice());
        let fsum = 0.5 * (loads.gamma[k] + loads.gamma[k - 1]);
        let mut rhs = tmp.clone();
        for i in 0..n {
            rhs[i] += fsum * loads.spatial[i] - half_a_lumped[i] * prev[i].max(0.0);
        }
        let tol = settings.tolerance * (1.0 + load_norm * loads.gamma[k].abs());
        let mut system = FeStep {
            dt,
            base,
            half_a_lumped: &half_a_lumped,
            rhs,
            cache: &mut cache,
            scratch: DVector::zeros(n),
        };
        let (root, it) = semismooth_newton(&mut system, prev.clone(), tol, settings.max_iterations)
            .map_err(|e| step_error(k, mu, e))?;
        stats.iterations.push(it);
        y.set_column(k, &root);
        prev = root;
    }
    stats.factorizations = cache.count;
    stats.seconds = start.elapsed().as_secs_f64();
    Ok((y, stats))
}

/// Reduced coefficients `y_rb ∈ R^{ℓ×(K+1)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RBTrajectory {
    pub coefficients: DMatrix<f64>,
}

impl RBTrajectory {
    pub fn dim(&self) -> usize {
        self.coefficients.nrows()
    }

    /// FE coefficients `Ψ y_rb`.
    pub fn lift(&self, basis: &RBBasis) -> Trajectory {
        if basis.dim() == 0 {
            return DMatrix::zeros(basis.n_dofs(), self.coefficients.ncols());
        }
        basis.psi() * &self.coefficients
    }
}

/// Precomputed reduced operators for plain reduced-basis solves.
#[derive(Debug, Clone)]
pub struct ReducedModel<'a> {
    model: &'a HighFidelityModel,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    /// `Ψᵀ`, so that column `j` holds row `j` of `Ψ`.
    psi_t: DMatrix<f64>,
    psi: DMatrix<f64>,
    load: DMatrix<f64>,
    gamma: Vec<f64>,
}

impl<'a> ReducedModel<'a> {
    pub fn new(model: &'a HighFidelityModel, basis: &RBBasis) -> Self {
        let psi = basis.psi().clone();
        let mass = psi.transpose() * model.ops.mass.mul_mat(&psi);
        let stiffness = psi.transpose() * basis.v_psi();
        let load = psi.transpose() * &model.load_basis;
        let gamma = model
            .ops
            .grid
            .instants()
            .iter()
            .map(|&t| model.problem.gamma(t))
            .collect();
        Self {
            model,
            mass,
            stiffness,
            psi_t: psi.transpose(),
            psi,
            load,
            gamma,
        }
    }

    pub fn dim(&self) -> usize {
        self.psi.ncols()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    /// `Ψᵀ M̃ max{0, v}` for an FE vector `v`, together with the active set.
    fn nonlinearity(&self, v: &DVector<f64>) -> DVector<f64> {
        let lumped = &self.model.ops.lumped;
        let w = DVector::from_iterator(
            v.len(),
            v.iter().zip(lumped.iter()).map(|(x, m)| m * x.max(0.0)),
        );
        &self.psi_t * w
    }

    pub fn solve(
        &self,
        mu: &[f64],
        settings: &NewtonSettings,
    ) -> Result<(RBTrajectory, SolveStats)> {
        settings.validate()?;
        let start = Instant::now();
        self.model.problem.set.check(mu)?;
        let l = self.dim();
        let steps = self.model.steps();
        let mut coeffs = DMatrix::zeros(l, steps + 1);
        let mut stats = SolveStats {
            steps,
            ..Default::default()
        };
        if l == 0 {
            stats.iterations = vec![0; steps];
            stats.seconds = start.elapsed().as_secs_f64();
            return Ok((
                RBTrajectory {
                    coefficients: coeffs,
                },
                stats,
            ));
        }
        let (c, a) = (self.model.c(mu), self.model.a(mu));
        let load = &self.load * DVector::from_vec(self.model.problem.beta(mu));
        let lumped = self.model.ops.lumped.clone();
        let mut system = RbStep {
            owner: self,
            a,
            base: DMatrix::zeros(l, l),
            rhs: DVector::zeros(l),
            active: vec![false; self.psi.nrows()],
            gram: DMatrix::zeros(l, l),
            lumped: &lumped,
        };
        let mut prev = DVector::zeros(l);
        let mut g_prev = DVector::zeros(l);
        let mut last_dt = f64::NAN;
        for k in 1..=steps {
            let dt = self.model.ops.grid.dt(k);
            if dt != last_dt {
                system.base = &self.mass / dt + &self.stiffness * (0.5 * c);
                last_dt = dt;
            }
            let explicit = &self.mass / dt - &self.stiffness * (0.5 * c);
            system.rhs = explicit * &prev - &g_prev * (0.5 * a)
                + &load * (0.5 * (self.gamma[k] + self.gamma[k - 1]));
            let tol = settings.tolerance * (1.0 + load.norm() * self.gamma[k].abs());
            let (root, it) =
                semismooth_newton(&mut system, prev.clone(), tol, settings.max_iterations)
                    .map_err(|e| step_error(k, mu, e))?;
            stats.iterations.push(it);
            g_prev = self.nonlinearity(&(&self.psi * &root));
            coeffs.set_column(k, &root);
            prev = root;
        }
        stats.seconds = start.elapsed().as_secs_f64();
        Ok((
            RBTrajectory {
                coefficients: coeffs,
            },
            stats,
        ))
    }
}

struct RbStep<'r, 'a> {
    owner: &'r ReducedModel<'a>,
    a: f64,
    base: DMatrix<f64>,
    rhs: DVector<f64>,
    /// Active set of the FE image for which `gram` is current.
    active: Vec<bool>,
    /// `Σ_{j active} m̃_j ψ_j ψ_jᵀ` over rows `ψ_j` of `Ψ`.
    gram: DMatrix<f64>,
    lumped: &'r [f64],
}

impl NewtonSystem for RbStep<'_, '_> {
    fn residual(&mut self, y: &DVector<f64>) -> DVector<f64> {
        let full = &self.owner.psi * y;
        &self.base * y + self.owner.nonlinearity(&full) * (0.5 * self.a) - &self.rhs
    }

    fn solve_jacobian(&mut self, y: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let full = &self.owner.psi * y;
        for (j, v) in full.iter().enumerate() {
            let on = *v > 0.0;
            if on != self.active[j] {
                let row = self.owner.psi_t.column(j);
                let w = if on { self.lumped[j] } else { -self.lumped[j] };
                self.gram.ger(w, &row, &row, 1.0);
                self.active[j] = on;
            }
        }
        let h = &self.base + &self.gram * (0.5 * self.a);
        dense_spd_solve(h, rhs)
    }
}

/// Reduced-basis trajectory for one parameter.
pub fn rb_solve(
    model: &HighFidelityModel,
    basis: &RBBasis,
    mu: &[f64],
    settings: &NewtonSettings,
) -> Result<(RBTrajectory, SolveStats)> {
    ReducedModel::new(model, basis).solve(mu, settings)
}

/// Reduced operators with the interpolated nonlinearity; every online
/// quantity has dimension `ℓ` or `L`.
#[derive(Debug, Clone)]
pub struct DeimReducedModel<'a> {
    model: &'a HighFidelityModel,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    /// `W = ΨᵀM̃Φ(PᵀΦ)⁻¹`, `ℓ × L`.
    weights: DMatrix<f64>,
    /// `S = PᵀΨ`, `L × ℓ`.
    sampled: DMatrix<f64>,
    load: DMatrix<f64>,
    gamma: Vec<f64>,
}

impl<'a> DeimReducedModel<'a> {
    pub fn new(model: &'a HighFidelityModel, basis: &RBBasis, deim: &DeimData) -> Result<Self> {
        if deim.n_dofs() != basis.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: basis.n_dofs(),
                found: deim.n_dofs(),
            });
        }
        let psi = basis.psi();
        let mass = psi.transpose() * model.ops.mass.mul_mat(psi);
        let stiffness = psi.transpose() * basis.v_psi();
        let mut lumped_phi = deim.phi().clone();
        for (i, mut row) in lumped_phi.row_iter_mut().enumerate() {
            row *= model.ops.lumped[i];
        }
        let weights = deim.right_solve(&(psi.transpose() * lumped_phi))?;
        let sampled = DMatrix::from_fn(deim.len(), psi.ncols(), |r, j| psi[(deim.indices()[r], j)]);
        let load = psi.transpose() * &model.load_basis;
        let gamma = model
            .ops
            .grid
            .instants()
            .iter()
            .map(|&t| model.problem.gamma(t))
            .collect();
        Ok(Self {
            model,
            mass,
            stiffness,
            weights,
            sampled,
            load,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn sampled(&self) -> &DMatrix<f64> {
        &self.sampled
    }

    fn nonlinearity(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.weights * positive_part(&(&self.sampled * y))
    }

    pub fn solve(
        &self,
        mu: &[f64],
        settings: &NewtonSettings,
    ) -> Result<(RBTrajectory, SolveStats)> {
        settings.validate()?;
        let start = Instant::now();
        self.model.problem.set.check(mu)?;
        let l = self.dim();
        let steps = self.model.steps();
        let mut coeffs = DMatrix::zeros(l, steps + 1);
        let mut stats = SolveStats {
            steps,
            ..Default::default()
        };
        if l == 0 {
            stats.iterations = vec![0; steps];
            stats.seconds = start.elapsed().as_secs_f64();
            return Ok((
                RBTrajectory {
                    coefficients: coeffs,
                },
                stats,
            ));
        }
        let (c, a) = (self.model.c(mu), self.model.a(mu));
        let load = &self.load * DVector::from_vec(self.model.problem.beta(mu));
        let mut prev = DVector::zeros(l);
        let mut g_prev = DVector::zeros(l);
        let mut base = DMatrix::zeros(l, l);
        let mut last_dt = f64::NAN;
        for k in 1..=steps {
            let dt = self.model.ops.grid.dt(k);
            if dt != last_dt {
                base = &self.mass / dt + &self.stiffness * (0.5 * c);
                last_dt = dt;
            }
            let explicit = &self.mass / dt - &self.stiffness * (0.5 * c);
            let rhs = explicit * &prev - &g_prev * (0.5 * a)
                + &load * (0.5 * (self.gamma[k] + self.gamma[k - 1]));
            let mut system = DeimStep {
                owner: self,
                a,
                base: &base,
                rhs,
            };
            let tol = settings.tolerance * (1.0 + load.norm() * self.gamma[k].abs());
            let (root, it) =
                semismooth_newton(&mut system, prev.clone(), tol, settings.max_iterations)
                    .map_err(|e| step_error(k, mu, e))?;
            stats.iterations.push(it);
            g_prev = self.nonlinearity(&root);
            coeffs.set_column(k, &root);
            prev = root;
        }
        stats.seconds = start.elapsed().as_secs_f64();
        Ok((
            RBTrajectory {
                coefficients: coeffs,
            },
            stats,
        ))
    }
}

struct DeimStep<'r, 'a> {
    owner: &'r DeimReducedModel<'a>,
    a: f64,
    base: &'r DMatrix<f64>,
    rhs: DVector<f64>,
}

impl NewtonSystem for DeimStep<'_, '_> {
    fn residual(&mut self, y: &DVector<f64>) -> DVector<f64> {
        self.base * y + self.owner.nonlinearity(y) * (0.5 * self.a) - &self.rhs
    }

    fn solve_jacobian(&mut self, y: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let s = &self.owner.sampled;
        let z = s * y;
        let mut masked = s.clone();
        for (r, mut row) in masked.row_iter_mut().enumerate() {
            if z[r] <= 0.0 {
                row.fill(0.0);
            }
        }
        let h = self.base + (&self.owner.weights * masked) * (0.5 * self.a);
        dense_solve(h, rhs)
    }
}

/// Reduced-basis trajectory with the interpolated nonlinearity.
pub fn rb_deim_solve(
    model: &HighFidelityModel,
    basis: &RBBasis,
    deim: &DeimData,
    mu: &[f64],
    settings: &NewtonSettings,
) -> Result<(RBTrajectory, SolveStats)> {
    DeimReducedModel::new(model, basis, deim)?.solve(mu, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{trajectory_norms, TimeGrid};
    use crate::problem::{make_example1, AdmissibleSet, ProblemDefinition, SeparableSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_example(n: usize, steps: usize) -> HighFidelityModel {
        let mut p = make_example1();
        p.a = Arc::new(|_: &[f64]| 0.0);
        HighFidelityModel::uniform(p, n, steps).unwrap()
    }

    #[test]
    fn scalar_model_iterations() {
        let mut sys = FnSystem {
            residual: |y: &DVector<f64>| DVector::from_element(1, y[0] + y[0].max(0.0) - 2.0),
            jacobian: |y: &DVector<f64>| {
                DMatrix::from_element(1, 1, 1.0 + if y[0] > 0.0 { 1.0 } else { 0.0 })
            },
        };
        let (root, it) = semismooth_newton(&mut sys, DVector::zeros(1), 1e-12, 50).unwrap();
        assert_eq!(root[0], 1.0);
        assert!(it <= 2);
        let (_, it) =
            semismooth_newton(&mut sys, DVector::from_element(1, 1.0), 1e-12, 50).unwrap();
        assert_eq!(it, 0);
    }

    #[test]
    fn divergence_reported() {
        let mut sys = FnSystem {
            residual: |y: &DVector<f64>| DVector::from_element(1, y[0].atan()),
            jacobian: |y: &DVector<f64>| DMatrix::from_element(1, 1, 1.0 / (1.0 + y[0] * y[0])),
        };
        let err = semismooth_newton(&mut sys, DVector::from_element(1, 3.0), 1e-12, 5).unwrap_err();
        assert!(matches!(err, Error::NewtonDivergence { .. }));
    }

    #[test]
    fn zero_source_gives_zero_trajectory() {
        let model = HighFidelityModel::uniform(make_example1(), 6, 10).unwrap();
        let (y, stats) = fe_solve(&model, &[0.0], &NewtonSettings::default()).unwrap();
        assert_eq!(y.amax(), 0.0);
        assert_eq!(stats.iterations.len(), 10);
    }

    #[test]
    fn linear_steps_take_one_iteration() {
        let model = linear_example(6, 12);
        let (_, stats) = fe_solve(&model, &[4.0], &NewtonSettings::default()).unwrap();
        assert!(
            stats.iterations[1..].iter().all(|&i| i == 1),
            "{:?}",
            stats.iterations
        );
    }

    #[test]
    fn residual_is_affine_without_reaction() {
        let model = linear_example(4, 4);
        let n = model.n_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand_vec = || DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let (yp, f0, f1, y, d) = (rand_vec(), rand_vec(), rand_vec(), rand_vec(), rand_vec());
        let mu = [2.0];
        let dt = 0.3;
        let g0 = fe_step_residual(&model, &mu, dt, &yp, &y, &f0, &f1);
        let g1 = fe_step_residual(&model, &mu, dt, &yp, &(&y + &d), &f0, &f1);
        let h = fe_step_jacobian(&model, &mu, dt, &y);
        assert!((g1 - g0 - h.mul_vec(&d)).amax() < 1e-12);
        let hz = fe_step_jacobian(&model, &mu, dt, &DVector::from_element(n, -1.0));
        assert_eq!(h, hz);
    }

    #[test]
    fn jacobian_finite_differences() {
        let model = HighFidelityModel::uniform(make_example1(), 5, 4).unwrap();
        let n = model.n_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DVector::from_fn(n, |_, _| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let yp = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let d = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let f = DVector::zeros(n);
        let mu = [3.0];
        let g = fe_step_residual(&model, &mu, 0.1, &yp, &y, &f, &f);
        let h = fe_step_jacobian(&model, &mu, 0.1, &y);
        assert!(h.is_symmetric(1e-14));
        h.factorize().unwrap();
        for eps in [1e-5, 1e-6] {
            let ge = fe_step_residual(&model, &mu, 0.1, &yp, &(&y + &d * eps), &f, &f);
            let err = (ge - &g - h.mul_vec(&d) * eps).norm();
            assert!(err <= 1e-8 * eps, "eps={eps}: {err}");
        }
    }

    #[test]
    fn tiny_dense_oracle() {
        let model = linear_example(3, 5);
        let mu = [3.0];
        let (y, _) = fe_solve(&model, &mu, &NewtonSettings::default()).unwrap();
        let m = model.ops.mass.to_dense();
        let v = model.ops.stiffness.to_dense();
        let c = model.c(&mu);
        let f = model.assemble_source_matrix(&mu).unwrap();
        let dt = model.ops.grid.dt(1);
        let lhs = &m / dt + &v * (0.5 * c);
        let rhs_op = &m / dt - &v * (0.5 * c);
        let lu = lhs.lu();
        let mut prev = DVector::zeros(4);
        for k in 1..=5 {
            let rhs = &rhs_op * &prev + (f.column(k) + f.column(k - 1)) * 0.5;
            let next = lu.solve(&rhs).unwrap();
            let scale = next.amax();
            assert!(scale > 0.0);
            assert!(
                (y.column(k) - &next).amax() <= 1e-10 * scale,
                "k={k} {} vs {}",
                y.column(k),
                next
            );
            prev = next;
        }
    }

    #[test]
    fn steps_satisfy_residual() {
        let model = HighFidelityModel::uniform(make_example1(), 8, 20).unwrap();
        let mu = [-6.0];
        let (y, _) = fe_solve(&model, &mu, &NewtonSettings::default()).unwrap();
        let f = model.assemble_source_matrix(&mu).unwrap();
        for k in 1..=20 {
            let g = fe_step_residual(
                &model,
                &mu,
                model.ops.grid.dt(k),
                &y.column(k - 1).into_owned(),
                &y.column(k).into_owned(),
                &f.column(k - 1).into_owned(),
                &f.column(k).into_owned(),
            );
            assert!(g.norm() <= 1e-10 * (1.0 + f.column(k).norm()));
        }
    }

    #[test]
    fn stability_bound_small() {
        let model = HighFidelityModel::uniform(make_example1(), 10, 40).unwrap();
        for mu in [-10.0, -3.0, 5.0, 10.0] {
            let (y, _) = fe_solve(&model, &[mu], &NewtonSettings::default()).unwrap();
            let lhs = trajectory_norms(&model.ops, &y).derivative_h;
            let rhs = model.problem.source_norm_h(&[mu]);
            assert!(lhs <= rhs * (1.0 + 1e-9), "{lhs} > {rhs}");
        }
    }

    #[test]
    fn full_basis_reproduces_fe() {
        let model = HighFidelityModel::uniform(make_example1(), 5, 15).unwrap();
        let basis = RBBasis::from_vectors(&model.ops, &DMatrix::identity(16, 16)).unwrap();
        let mu = [7.5];
        let s = NewtonSettings::default();
        let (fe, _) = fe_solve(&model, &mu, &s).unwrap();
        let (rb, _) = rb_solve(&model, &basis, &mu, &s).unwrap();
        let diff = rb.lift(&basis) - &fe;
        let err = trajectory_norms(&model.ops, &diff).y;
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn single_mode_matches_scalar_recursion() {
        // Source shaped like one nodal vector b, basis spanned by b: with
        // a = 0 the reduced problem is a scalar CN recursion.
        let mesh_n = 4;
        let grid = TimeGrid::from_instants(vec![0.0, 0.5, 0.8, 1.5, 2.0]).unwrap();
        let set = AdmissibleSet::new(vec![0.5], vec![2.0]).unwrap();
        let problem = ProblemDefinition::from_separable(
            "scalar",
            set,
            Arc::new(|mu: &[f64]| mu[0]),
            Arc::new(|_: &[f64]| 0.0),
            SeparableSource {
                spatial: vec![Arc::new(|x: f64, y: f64| (x * y).sin())],
                beta: Arc::new(|_: &[f64]| vec![1.0]),
                gamma: Arc::new(|t: f64| t.cos() + t),
            },
            2.0,
        )
        .unwrap();
        let ops = crate::discretization::FEOperators::new(mesh_n, grid).unwrap();
        let model = HighFidelityModel::new(problem, ops);
        let b = model.load_basis.clone();
        let basis = RBBasis::from_vectors(&model.ops, &b).unwrap();
        let psi = basis.psi().column(0).into_owned();
        let m = model.ops.mass.quad_form(psi.as_slice());
        let v = model.ops.stiffness.quad_form(psi.as_slice());
        let fb = psi.dot(&b.column(0));
        let mu = [1.3];
        let (rb, _) = rb_solve(&model, &basis, &mu, &NewtonSettings::default()).unwrap();
        let mut prev = 0.0;
        for k in 1..=4 {
            let dt = model.ops.grid.dt(k);
            let g = |t: f64| t.cos() + t;
            let rhs = (m / dt - 0.5 * mu[0] * v) * prev
                + 0.5 * fb * (g(model.ops.grid.t(k)) + g(model.ops.grid.t(k - 1)));
            let next = rhs / (m / dt + 0.5 * mu[0] * v);
            assert!((rb.coefficients[(0, k)] - next).abs() <= 1e-12 * next.abs());
            prev = next;
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn step_map_is_monotone(seed in 0u64..10_000, mu in -10.0f64..10.0) {
            let model = HighFidelityModel::uniform(make_example1(), 4, 4).unwrap();
            let n = model.n_dofs();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = || DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let (yp, f, y, z) = (r(), r(), r(), r());
            let gy = fe_step_residual(&model, &[mu], 0.05, &yp, &y, &f, &f);
            let gz = fe_step_residual(&model, &[mu], 0.05, &yp, &z, &f, &f);
            proptest::prop_assert!((gy - gz).dot(&(y - z)) >= 0.0);
        }
    }
}
