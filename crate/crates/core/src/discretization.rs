//! P1 finite elements on the unit square, time grids, load vectors and
//! space-time norms.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{SparseSymMatrix, SpdFactorization};
use crate::problem::ProblemDefinition;
use crate::quadrature::triangle_rule;

/// Nodal coefficients `y⁰ … y^K` stored column by column (`N × (K+1)`).
pub type Trajectory = DMatrix<f64>;

/// Uniform right-angled triangulation of `(0,1)²` with `n` subdivisions per
/// side. Every square is cut along its south-west to north-east diagonal.
#[derive(Debug, Clone)]
pub struct SpatialMesh {
    n: usize,
    /// Degree of freedom of each grid vertex, `None` on the boundary.
    dofs: Vec<Option<usize>>,
    triangles: Vec<[usize; 3]>,
}

pub fn build_mesh(n: usize) -> Result<SpatialMesh> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "mesh needs n >= 2, got {n}"
        )));
    }
    let side = n + 1;
    let mut dofs = vec![None; side * side];
    let mut next = 0;
    for j in 1..n {
        for i in 1..n {
            dofs[j * side + i] = Some(next);
            next += 1;
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let sw = j * side + i;
            let se = sw + 1;
            let nw = sw + side;
            let ne = nw + 1;
            triangles.push([sw, se, ne]);
            triangles.push([sw, ne, nw]);
        }
    }
    Ok(SpatialMesh { n, dofs, triangles })
}

impl SpatialMesh {
    pub fn subdivisions(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn n_dofs(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    pub fn n_vertices(&self) -> usize {
        self.dofs.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex(&self, v: usize) -> (f64, f64) {
        let side = self.n + 1;
        ((v % side) as f64 * self.h(), (v / side) as f64 * self.h())
    }

    pub fn dof(&self, v: usize) -> Option<usize> {
        self.dofs[v]
    }

    /// Coordinates of the interior node with the given degree of freedom.
    pub fn dof_coordinates(&self, dof: usize) -> (f64, f64) {
        let m = self.n - 1;
        (
            ((dof % m) + 1) as f64 * self.h(),
            ((dof / m) + 1) as f64 * self.h(),
        )
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertex(a), self.vertex(b), self.vertex(c));
        0.5 * ((pb.0 - pa.0) * (pc.1 - pa.1) - (pc.0 - pa.0) * (pb.1 - pa.1))
    }
}

/// Element mass and stiffness matrices of a P1 triangle.
fn element_matrices(p: [(f64, f64); 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3], f64) {
    let area =
        0.5 * ((p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1));
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = p[j].1 - p[k].1;
        c[i] = p[k].0 - p[j].0;
    }
    let mut mass = [[0.0; 3]; 3];
    let mut stiff = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            mass[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
            stiff[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        }
    }
    (mass, stiff, area)
}

/// Spatial operators on the interior degrees of freedom.
#[derive(Debug, Clone)]
pub struct SpatialOperators {
    pub mass: SparseSymMatrix,
    pub stiffness: SparseSymMatrix,
    pub lumped: Vec<f64>,
}

/// Assembles mass, stiffness and lumped mass with Dirichlet nodes removed.
/// Mass and stiffness share one sparsity pattern.
pub fn assemble_operators(mesh: &SpatialMesh) -> Result<SpatialOperators> {
    let n = mesh.n_dofs();
    let mut mt = Vec::with_capacity(mesh.triangles.len() * 9);
    let mut vt = Vec::with_capacity(mesh.triangles.len() * 9);
    let mut lumped = vec![0.0; n];
    for tri in &mesh.triangles {
        let p = [
            mesh.vertex(tri[0]),
            mesh.vertex(tri[1]),
            mesh.vertex(tri[2]),
        ];
        let (me, ke, area) = element_matrices(p);
        for a in 0..3 {
            let Some(i) = mesh.dofs[tri[a]] else { continue };
            lumped[i] += area / 3.0;
            for b in 0..3 {
                let Some(j) = mesh.dofs[tri[b]] else { continue };
                mt.push((i, j, me[a][b]));
                vt.push((i, j, ke[a][b]));
            }
        }
    }
    Ok(SpatialOperators {
        mass: SparseSymMatrix::from_triplets(n, &mt)?,
        stiffness: SparseSymMatrix::from_triplets(n, &vt)?,
        lumped,
    })
}

/// Mass and stiffness on all grid vertices, boundary included.
pub fn assemble_full(mesh: &SpatialMesh) -> Result<(SparseSymMatrix, SparseSymMatrix)> {
    let mut mt = Vec::new();
    let mut vt = Vec::new();
    for tri in &mesh.triangles {
        let p = [
            mesh.vertex(tri[0]),
            mesh.vertex(tri[1]),
            mesh.vertex(tri[2]),
        ];
        let (me, ke, _) = element_matrices(p);
        for a in 0..3 {
            for b in 0..3 {
                mt.push((tri[a], tri[b], me[a][b]));
                vt.push((tri[a], tri[b], ke[a][b]));
            }
        }
    }
    Ok((
        SparseSymMatrix::from_triplets(mesh.n_vertices(), &mt)?,
        SparseSymMatrix::from_triplets(mesh.n_vertices(), &vt)?,
    ))
}

/// `∫_Ω g ζᵢ dx` for every interior hat function, by the 7-point rule.
pub fn assemble_load<G: Fn(f64, f64) -> f64>(mesh: &SpatialMesh, g: G) -> DVector<f64> {
    let mut out = DVector::zeros(mesh.n_dofs());
    let rule = triangle_rule();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.iter().all(|&v| mesh.dofs[v].is_none()) {
            continue;
        }
        let p = [
            mesh.vertex(tri[0]),
            mesh.vertex(tri[1]),
            mesh.vertex(tri[2]),
        ];
        let area = mesh.triangle_area(t);
        let mut local = [0.0; 3];
        for (lambda, w) in &rule {
            let x1 = lambda[0] * p[0].0 + lambda[1] * p[1].0 + lambda[2] * p[2].0;
            let x2 = lambda[0] * p[0].1 + lambda[1] * p[1].1 + lambda[2] * p[2].1;
            let gv = g(x1, x2) * w * area;
            for a in 0..3 {
                local[a] += gv * lambda[a];
            }
        }
        for a in 0..3 {
            if let Some(i) = mesh.dofs[tri[a]] {
                out[i] += local[a];
            }
        }
    }
    out
}

/// Time instants `0 = t₀ < … < t_K = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    instants: Vec<f64>,
}

pub fn make_time_grid(final_time: f64, steps: usize) -> Result<TimeGrid> {
    if steps < 1 || !(final_time > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time grid needs K >= 1 and T > 0, got K={steps}, T={final_time}"
        )));
    }
    let instants = (0..=steps)
        .map(|k| {
            if k == steps {
                final_time
            } else {
                k as f64 * final_time / steps as f64
            }
        })
        .collect();
    Ok(TimeGrid { instants })
}

impl TimeGrid {
    pub fn from_instants(instants: Vec<f64>) -> Result<Self> {
        if instants.len() < 2 || instants[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "time grid must start at 0 with K >= 1".into(),
            ));
        }
        if instants.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "time instants must increase strictly".into(),
            ));
        }
        Ok(Self { instants })
    }

    /// Number of slabs `K`.
    pub fn steps(&self) -> usize {
        self.instants.len() - 1
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn t(&self, k: usize) -> f64 {
        self.instants[k]
    }

    /// Length of slab `I_k = [t_{k-1}, t_k)`, `k ≥ 1`.
    pub fn dt(&self, k: usize) -> f64 {
        self.instants[k] - self.instants[k - 1]
    }

    pub fn max_dt(&self) -> f64 {
        (1..=self.steps()).map(|k| self.dt(k)).fold(0.0, f64::max)
    }

    pub fn final_time(&self) -> f64 {
        *self.instants.last().unwrap()
    }
}

/// `⟨σ̇_l, τ_k⟩` for the hat function `σ_l` and slab indicator `τ_k`.
pub fn temporal_derivative_entry(l: usize, k: usize) -> f64 {
    (l == k) as u8 as f64 - (l + 1 == k) as u8 as f64
}

/// `⟨σ_l, τ_k⟩` for the hat function `σ_l` and slab indicator `τ_k`.
pub fn temporal_mass_entry(grid: &TimeGrid, l: usize, k: usize) -> f64 {
    if k == l && l >= 1 {
        0.5 * grid.dt(l)
    } else if k == l + 1 {
        0.5 * grid.dt(l + 1)
    } else {
        0.0
    }
}

/// Spatial operators together with a time grid and a cached stiffness
/// factorization.
#[derive(Debug, Clone)]
pub struct FEOperators {
    pub mesh: Arc<SpatialMesh>,
    pub grid: TimeGrid,
    pub mass: Arc<SparseSymMatrix>,
    pub stiffness: Arc<SparseSymMatrix>,
    pub lumped: Arc<Vec<f64>>,
    stiffness_factor: Arc<SpdFactorization>,
}

impl FEOperators {
    pub fn new(n: usize, grid: TimeGrid) -> Result<Self> {
        let mesh = build_mesh(n)?;
        let ops = assemble_operators(&mesh)?;
        let factor = ops.stiffness.factorize()?;
        ops.mass.factorize()?;
        Ok(Self {
            mesh: Arc::new(mesh),
            grid,
            mass: Arc::new(ops.mass),
            stiffness: Arc::new(ops.stiffness),
            lumped: Arc::new(ops.lumped),
            stiffness_factor: Arc::new(factor),
        })
    }

    /// Same spatial operators on a different time grid.
    pub fn with_time_grid(&self, grid: TimeGrid) -> Self {
        Self {
            grid,
            ..self.clone()
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.mass.dim()
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn stiffness_factor(&self) -> &SpdFactorization {
        &self.stiffness_factor
    }

    pub fn lumped_matrix(&self) -> SparseSymMatrix {
        SparseSymMatrix::from_diagonal(&self.lumped)
    }

    pub fn bilinear(&self, weight: Weight, x: &[f64], y: &[f64]) -> f64 {
        match weight {
            Weight::Mass => self.mass.bilinear(x, y),
            Weight::Stiffness => self.stiffness.bilinear(x, y),
            Weight::Lumped => x
                .iter()
                .zip(y)
                .zip(self.lumped.iter())
                .map(|((a, b), m)| a * b * m)
                .sum(),
            Weight::Identity => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// Spatial inner product used in a norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Mass,
    Stiffness,
    Lumped,
    Identity,
}

/// Slab averages `ȳ^k = (y^{k-1} + y^k)/2`, returned as an `N × K` matrix.
pub fn time_average(y: &Trajectory) -> DMatrix<f64> {
    let k = y.ncols() - 1;
    DMatrix::from_fn(y.nrows(), k, |i, j| 0.5 * (y[(i, j)] + y[(i, j + 1)]))
}

/// Space-time norms of a piecewise linear trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryNorms {
    /// `L²(0,T;H)` norm.
    pub h: f64,
    /// `L²(0,T;V)` norm.
    pub y: f64,
    /// `L²(0,T;H)` norm of the time derivative.
    pub derivative_h: f64,
    pub final_h: f64,
    pub final_v: f64,
}

/// `∫ ‖φ(t)‖²_A dt` for a piecewise linear trajectory.
pub fn linear_in_time_square(ops: &FEOperators, weight: Weight, y: &Trajectory) -> f64 {
    let mut total = 0.0;
    for k in 1..y.ncols() {
        let a = y.column(k - 1);
        let b = y.column(k);
        let (a, b) = (a.as_slice(), b.as_slice());
        let aa = ops.bilinear(weight, a, a);
        let ab = ops.bilinear(weight, a, b);
        let bb = ops.bilinear(weight, b, b);
        total += ops.grid.dt(k) / 3.0 * (aa + ab + bb);
    }
    total
}

/// `∫ ⟨φ(t), ψ(t)⟩_A dt` for two piecewise linear trajectories.
pub fn linear_in_time_inner(
    ops: &FEOperators,
    weight: Weight,
    y: &Trajectory,
    z: &Trajectory,
) -> f64 {
    let mut total = 0.0;
    for k in 1..y.ncols() {
        let (ya, yb) = (y.column(k - 1), y.column(k));
        let (za, zb) = (z.column(k - 1), z.column(k));
        let (ya, yb, za, zb) = (ya.as_slice(), yb.as_slice(), za.as_slice(), zb.as_slice());
        let s = 2.0 * ops.bilinear(weight, ya, za)
            + ops.bilinear(weight, ya, zb)
            + ops.bilinear(weight, yb, za)
            + 2.0 * ops.bilinear(weight, yb, zb);
        total += ops.grid.dt(k) / 6.0 * s;
    }
    total
}

pub fn trajectory_norms(ops: &FEOperators, y: &Trajectory) -> TrajectoryNorms {
    let mut derivative = 0.0;
    for k in 1..y.ncols() {
        let d = y.column(k) - y.column(k - 1);
        derivative += ops.mass.quad_form(d.as_slice()) / ops.grid.dt(k);
    }
    let last = y.column(y.ncols() - 1);
    TrajectoryNorms {
        h: linear_in_time_square(ops, Weight::Mass, y).max(0.0).sqrt(),
        y: linear_in_time_square(ops, Weight::Stiffness, y)
            .max(0.0)
            .sqrt(),
        derivative_h: derivative.max(0.0).sqrt(),
        final_h: ops.mass.quad_form(last.as_slice()).max(0.0).sqrt(),
        final_v: ops.stiffness.quad_form(last.as_slice()).max(0.0).sqrt(),
    }
}

/// `(Σ_k Δt_k vᵏᵀ A vᵏ)^{1/2}` for slab values `v` (`N × K`).
pub fn piecewise_constant_norm(ops: &FEOperators, weight: Weight, values: &DMatrix<f64>) -> f64 {
    piecewise_constant_inner(ops, weight, values, values)
        .max(0.0)
        .sqrt()
}

/// `Σ_k Δt_k vᵏᵀ A wᵏ`.
pub fn piecewise_constant_inner(
    ops: &FEOperators,
    weight: Weight,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> f64 {
    (0..v.ncols())
        .map(|k| {
            let (a, b) = (v.column(k), w.column(k));
            ops.grid.dt(k + 1) * ops.bilinear(weight, a.as_slice(), b.as_slice())
        })
        .sum()
}

/// Separable load data of one parameter: `F^k = γ(t_k) b`.
#[derive(Debug, Clone)]
pub struct LoadData {
    pub spatial: DVector<f64>,
    pub gamma: Vec<f64>,
}

impl LoadData {
    pub fn column(&self, k: usize) -> DVector<f64> {
        &self.spatial * self.gamma[k]
    }

    pub fn is_zero(&self) -> bool {
        self.spatial.iter().all(|v| *v == 0.0) || self.gamma.iter().all(|g| *g == 0.0)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.spatial.len(), self.gamma.len(), |i, k| {
            self.spatial[i] * self.gamma[k]
        })
    }
}

/// Problem, operators and the assembled spatial load factors `B_F`.
#[derive(Debug, Clone)]
pub struct HighFidelityModel {
    pub problem: ProblemDefinition,
    pub ops: FEOperators,
    /// `B_F`, one column per separable term.
    pub load_basis: DMatrix<f64>,
    poincare: Arc<OnceLock<f64>>,
}

impl HighFidelityModel {
    pub fn new(problem: ProblemDefinition, ops: FEOperators) -> Self {
        let n = ops.n_dofs();
        let terms = problem.source.n_terms();
        let mut load_basis = DMatrix::zeros(n, terms);
        for (j, s) in problem.source.spatial.iter().enumerate() {
            load_basis.set_column(j, &assemble_load(&ops.mesh, |x1, x2| s(x1, x2)));
        }
        Self {
            problem,
            ops,
            load_basis,
            poincare: Arc::new(OnceLock::new()),
        }
    }

    /// Builds the operators on the uniform grid with `steps` slabs over the
    /// problem's time horizon.
    pub fn uniform(problem: ProblemDefinition, n: usize, steps: usize) -> Result<Self> {
        let grid = make_time_grid(problem.final_time, steps)?;
        let ops = FEOperators::new(n, grid)?;
        Ok(Self::new(problem, ops))
    }

    /// Same problem and spatial data on another time grid.
    pub fn with_time_grid(&self, grid: TimeGrid) -> Self {
        Self {
            problem: self.problem.clone(),
            ops: self.ops.with_time_grid(grid),
            load_basis: self.load_basis.clone(),
            poincare: self.poincare.clone(),
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.ops.n_dofs()
    }

    pub fn steps(&self) -> usize {
        self.ops.steps()
    }

    pub fn c(&self, mu: &[f64]) -> f64 {
        self.problem.c(mu)
    }

    pub fn a(&self, mu: &[f64]) -> f64 {
        self.problem.a(mu)
    }

    pub fn load_data(&self, mu: &[f64]) -> Result<LoadData> {
        self.problem.set.check(mu)?;
        let beta = DVector::from_vec(self.problem.beta(mu));
        if beta.len() != self.load_basis.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.load_basis.ncols(),
                found: beta.len(),
            });
        }
        let gamma = self
            .ops
            .grid
            .instants()
            .iter()
            .map(|&t| self.problem.gamma(t))
            .collect();
        Ok(LoadData {
            spatial: &self.load_basis * beta,
            gamma,
        })
    }

    /// `F(μ) ∈ R^{N×(K+1)}` from the separable factors.
    pub fn assemble_source_matrix(&self, mu: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.load_data(mu)?.to_matrix())
    }

    /// `F(μ)` by quadrature of the continuous source at every instant.
    pub fn assemble_source_matrix_direct(&self, mu: &[f64]) -> Result<DMatrix<f64>> {
        self.problem.set.check(mu)?;
        let mut out = DMatrix::zeros(self.n_dofs(), self.steps() + 1);
        for (k, &t) in self.ops.grid.instants().iter().enumerate() {
            let f = &self.problem.f;
            out.set_column(k, &assemble_load(&self.ops.mesh, |x1, x2| f(t, mu, x1, x2)));
        }
        Ok(out)
    }

    /// Discrete Poincaré constant, computed once and cached.
    pub fn poincare_constant(&self) -> f64 {
        *self
            .poincare
            .get_or_init(|| crate::estimators::poincare_constant(&self.ops))
    }
}
