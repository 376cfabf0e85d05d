//! Certified reduced-basis and empirical-interpolation reduction for the
//! parametrized nonsmooth heat equation
//! `ẏ − c(μ)Δy + a(μ) max{0, y} = f(μ)` on the unit square.

pub mod artifact;
pub mod deim;
pub mod discretization;
pub mod error;
pub mod estimators;
pub mod numerics;
pub mod problem;
pub mod quadrature;
pub mod reduction;
pub mod solvers;

pub use artifact::{load_artifact, save_artifact, Artifact};
pub use deim::{
    adaptive_rb_deim, classical_deim_offline, deim_points, deim_update, initial_deim,
    seed_parameter, AdaptiveSettings, AdaptiveTrace, DeimData,
};
pub use discretization::{
    make_time_grid, FEOperators, HighFidelityModel, SpatialMesh, TimeGrid, Trajectory, Weight,
};
pub use error::{Error, Result};
pub use estimators::{EstimateReport, ResidualVectors};
pub use numerics::{SparseSymMatrix, SpdFactorization};
pub use problem::{
    example1_with_final_time, example2_with_final_time, make_example1, make_example2, sample_grid,
    AdmissibleSet, Parameter, ProblemDefinition,
};
pub use reduction::{greedy_rb, GreedyMode, GreedySettings, GreedyTrace, RBBasis};
pub use solvers::{fe_solve, rb_deim_solve, rb_solve, NewtonSettings, SolveStats};
