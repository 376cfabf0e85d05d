//! Residuals, dual norms and a-posteriori error estimators.

use nalgebra::{DMatrix, DVector};

use crate::deim::DeimData;
use crate::discretization::{
    linear_in_time_square, piecewise_constant_inner, piecewise_constant_norm, time_average,
    FEOperators, HighFidelityModel, Trajectory, Weight,
};
use crate::error::{Error, Result};
use crate::problem::Parameter;

/// Below this value the projected error counts as zero.
pub const DEGENERATE_TOLERANCE: f64 = 1e-14;

/// Slab vectors `r¹ … r^K` (`N × K`) of a residual functional acting on
/// piecewise constant test functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVectors {
    pub slabs: DMatrix<f64>,
}

fn positive_part(y: &DMatrix<f64>) -> DMatrix<f64> {
    y.map(|v| v.max(0.0))
}

/// Shared assembly with nodal nonlinearity values `g` (`N × (K+1)`).
fn assemble(
    model: &HighFidelityModel,
    mu: &[f64],
    y: &Trajectory,
    g: &DMatrix<f64>,
) -> Result<ResidualVectors> {
    let ops = &model.ops;
    let steps = ops.steps();
    if y.ncols() != steps + 1 || y.nrows() != ops.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: steps + 1,
            found: y.ncols(),
        });
    }
    let loads = model.load_data(mu)?;
    let (c, a) = (model.c(mu), model.a(mu));
    let my = ops.mass.mul_mat(y);
    let vy = ops.stiffness.mul_mat(y);
    let n = ops.n_dofs();
    let mut slabs = DMatrix::zeros(n, steps);
    for k in 1..=steps {
        let dt = ops.grid.dt(k);
        let fsum = 0.5 * dt * (loads.gamma[k] + loads.gamma[k - 1]);
        let mut col = slabs.column_mut(k - 1);
        for i in 0..n {
            col[i] = fsum * loads.spatial[i]
                - (my[(i, k)] - my[(i, k - 1)])
                - 0.5 * c * dt * (vy[(i, k)] + vy[(i, k - 1)])
                - 0.5 * a * dt * ops.lumped[i] * (g[(i, k)] + g[(i, k - 1)]);
        }
    }
    Ok(ResidualVectors { slabs })
}

/// Residual of a lifted reduced-basis trajectory with the exact nonlinearity.
pub fn assemble_residual_rb(
    model: &HighFidelityModel,
    mu: &[f64],
    y: &Trajectory,
) -> Result<ResidualVectors> {
    assemble(model, mu, y, &positive_part(y))
}

/// Residual with the interpolated nonlinearity `Φ(PᵀΦ)⁻¹Pᵀ max{0, y}`.
pub fn assemble_residual_rb_deim(
    model: &HighFidelityModel,
    mu: &[f64],
    y: &Trajectory,
    deim: &DeimData,
) -> Result<ResidualVectors> {
    let g = deim.apply_matrix(&positive_part(y))?;
    assemble(model, mu, y, &g)
}

/// `(Σ_k Δt_k⁻¹ rᵏᵀ V⁻¹ rᵏ)^{1/2}`.
pub fn dual_norm_y(res: &ResidualVectors, ops: &FEOperators) -> f64 {
    let factor = ops.stiffness_factor();
    let mut total = 0.0;
    let mut buf = vec![0.0; res.slabs.nrows()];
    for (k, col) in res.slabs.column_iter().enumerate() {
        buf.copy_from_slice(col.as_slice());
        factor.solve_in_place(&mut buf);
        let q: f64 = buf.iter().zip(col.iter()).map(|(x, r)| x * r).sum();
        total += q / ops.grid.dt(k + 1);
    }
    total.max(0.0).sqrt()
}

impl ResidualVectors {
    pub fn rb(model: &HighFidelityModel, mu: &[f64], y: &Trajectory) -> Result<Self> {
        assemble_residual_rb(model, mu, y)
    }

    pub fn rb_deim(
        model: &HighFidelityModel,
        mu: &[f64],
        y: &Trajectory,
        deim: &DeimData,
    ) -> Result<Self> {
        assemble_residual_rb_deim(model, mu, y, deim)
    }

    pub fn dual_norm(&self, ops: &FEOperators) -> f64 {
        dual_norm_y(self, ops)
    }

    /// Dual norm scaled by `1/c(μ)`.
    pub fn delta(&self, model: &HighFidelityModel, mu: &[f64]) -> f64 {
        self.dual_norm(&model.ops) / model.c(mu)
    }
}

/// Residual-based bound `Δ_rb` for a lifted reduced-basis trajectory.
pub fn delta_rb(model: &HighFidelityModel, mu: &[f64], y: &Trajectory) -> Result<f64> {
    Ok(assemble_residual_rb(model, mu, y)?.delta(model, mu))
}

/// Residual-based bound `Δ_rb,L` with the interpolated nonlinearity.
pub fn delta_rb_l(
    model: &HighFidelityModel,
    mu: &[f64],
    y: &Trajectory,
    deim: &DeimData,
) -> Result<f64> {
    Ok(assemble_residual_rb_deim(model, mu, y, deim)?.delta(model, mu))
}

/// Slab averages of the interpolation deviation
/// `Φ(PᵀΦ)⁻¹Pᵀ max{0,yᵏ} − max{0,yᵏ}`.
pub fn deim_deviation(y: &Trajectory, deim: &DeimData) -> DMatrix<f64> {
    let g = positive_part(y);
    let d = deim.apply_matrix(&g).expect("dimensions checked by caller") - g;
    time_average(&d)
}

/// Interpolation error bound `Δ_L`.
pub fn delta_l(
    model: &HighFidelityModel,
    mu: &[f64],
    y: &Trajectory,
    deim: &DeimData,
    c_p: f64,
) -> f64 {
    let d = deim_deviation(y, deim);
    c_p * model.a(mu) / model.c(mu) * piecewise_constant_norm(&model.ops, Weight::Lumped, &d)
}

/// `‖φ − P^δφ‖_H` for a piecewise linear trajectory: `Σ_k (Δt_k/12)‖δφᵏ‖²_M`.
pub fn averaging_defect_h(ops: &FEOperators, e: &Trajectory) -> f64 {
    let mut total = 0.0;
    for k in 1..e.ncols() {
        let d = e.column(k) - e.column(k - 1);
        total += ops.grid.dt(k) / 12.0 * ops.mass.quad_form(d.as_slice());
    }
    total.max(0.0).sqrt()
}

/// Temporal projection estimator `Δ_P^δ`.
pub fn delta_p(
    model: &HighFidelityModel,
    mu: &[f64],
    fe: &Trajectory,
    reduced: &Trajectory,
) -> Result<f64> {
    let ops = &model.ops;
    let e = fe - reduced;
    let pe = piecewise_constant_norm(ops, Weight::Stiffness, &time_average(&e));
    if pe < DEGENERATE_TOLERANCE {
        return Err(Error::DegenerateError(pe));
    }
    let a = model.a(mu);
    if a == 0.0 {
        return Ok(0.0);
    }
    let dg = positive_part(fe) - positive_part(reduced);
    let nonlinear = linear_in_time_square(ops, Weight::Mass, &dg)
        .max(0.0)
        .sqrt();
    Ok(a / model.c(mu) * nonlinear * averaging_defect_h(ops, &e) / pe)
}

/// Mass-lumping error `|Σ_k Δt_k vᵏᵀ(M − M̃)wᵏ|` for slab values.
pub fn mass_lumping_error(ops: &FEOperators, v: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (piecewise_constant_inner(ops, Weight::Mass, v, w)
        - piecewise_constant_inner(ops, Weight::Lumped, v, w))
    .abs()
}

/// Mass-lumping estimator `Δ_H̃`.
pub fn delta_masslump(
    model: &HighFidelityModel,
    mu: &[f64],
    fe: &Trajectory,
    reduced: &Trajectory,
    deim: &DeimData,
) -> Result<f64> {
    let ops = &model.ops;
    let pe = time_average(&(fe - reduced));
    let pe_norm = piecewise_constant_norm(ops, Weight::Stiffness, &pe);
    if pe_norm < DEGENERATE_TOLERANCE {
        return Err(Error::DegenerateError(pe_norm));
    }
    let a = model.a(mu);
    if a == 0.0 {
        return Ok(0.0);
    }
    let g = time_average(&positive_part(reduced));
    let d = piecewise_constant_norm(ops, Weight::Lumped, &deim_deviation(reduced, deim));
    let bracket = mass_lumping_error(ops, &g, &pe) + d * mass_lumping_error(ops, &pe, &pe);
    Ok(a / (model.c(mu) * pe_norm) * bracket)
}

/// Discrete Poincaré constant `1/√λ_min` of `Vx = λMx`, by inverse
/// iteration with the cached stiffness factorization.
pub fn poincare_constant(ops: &FEOperators) -> f64 {
    let n = ops.n_dofs();
    let mut x = DVector::from_element(n, 1.0);
    let mut lambda = f64::INFINITY;
    for _ in 0..1000 {
        let mut next = ops.mass.mul_vec(&x);
        ops.stiffness_factor().solve_in_place(next.as_mut_slice());
        let scale = ops.mass.quad_form(next.as_slice()).sqrt();
        next /= scale;
        let rq = ops.stiffness.quad_form(next.as_slice());
        let converged = (lambda - rq).abs() <= 1e-15 * rq;
        lambda = rq;
        x = next;
        if converged {
            break;
        }
    }
    1.0 / lambda.sqrt()
}

/// Error norms of a reduced trajectory against the full-order one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueErrors {
    pub projected_y: f64,
    pub y: f64,
    pub h: f64,
}

pub fn true_errors(ops: &FEOperators, fe: &Trajectory, reduced: &Trajectory) -> TrueErrors {
    let e = fe - reduced;
    TrueErrors {
        projected_y: piecewise_constant_norm(ops, Weight::Stiffness, &time_average(&e)),
        y: linear_in_time_square(ops, Weight::Stiffness, &e)
            .max(0.0)
            .sqrt(),
        h: linear_in_time_square(ops, Weight::Mass, &e).max(0.0).sqrt(),
    }
}

/// Per-parameter estimator and validation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub mu: Parameter,
    /// `Δ_rb` or `Δ_rb,L`.
    pub estimator: f64,
    pub delta_l: f64,
    pub delta_p: Option<f64>,
    pub delta_mass: Option<f64>,
    pub err_projected_y: f64,
    pub err_y: f64,
    pub efficiency: f64,
    pub t_fe_seconds: f64,
    pub t_reduced_seconds: f64,
}

impl EstimateReport {
    /// Estimator used online: `Δ_rb` or `Δ_rb,L + Δ_L`.
    pub fn online_estimate(&self) -> f64 {
        self.estimator + self.delta_l
    }

    pub const CSV_HEADER: &'static str = "delta_rb_or_rbL,delta_L,delta_P,delta_mass,err_PdeltaY,err_Y,efficiency,t_fe_seconds,t_reduced_seconds";

    /// Comma-separated fields after the parameter components.
    pub fn csv_fields(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.estimator,
            self.delta_l,
            opt(self.delta_p),
            opt(self.delta_mass),
            self.err_projected_y,
            self.err_y,
            self.efficiency,
            self.t_fe_seconds,
            self.t_reduced_seconds
        )
    }
}

/// Estimator over true error; defined as 1 when both vanish.
pub fn efficiency(estimate: f64, error: f64) -> f64 {
    if error == 0.0 {
        if estimate == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        estimate / error
    }
}
