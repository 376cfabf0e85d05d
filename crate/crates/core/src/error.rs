use thiserror::Error;

/// Errors raised by the reduced-order toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix not SPD: non-positive pivot {value:e} at index {index}")]
    NotSpd { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("eigenproblem of dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter {mu:?} lies outside the admissible set")]
    ParameterOutOfBounds { mu: Vec<f64> },

    #[error(
        "semismooth Newton did not converge within {iterations} iterations (residual {residual:e})"
    )]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("singular Newton matrix")]
    SingularJacobian,

    #[error("time step {step} failed for parameter {mu:?}: {source}")]
    TimeStep {
        step: usize,
        mu: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("all snapshots are zero")]
    ZeroSnapshots,

    #[error("redundant mode: residual V-norm {0:e} after orthogonalization")]
    RedundantMode(f64),

    #[error("DEIM point selection picked index {0} twice")]
    DuplicateDeimIndex(usize),

    #[error("DEIM interpolation matrix is singular (smallest singular value {0:e})")]
    SingularInterpolation(f64),

    #[error("degenerate error trajectory: projected Y-norm {0:e}")]
    DegenerateError(f64),

    #[error("training stagnated after {iterations} iterations (max estimator {value:e})")]
    Stagnation { iterations: usize, value: f64 },

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidArgument(_)
                | Error::ParameterOutOfBounds { .. }
                | Error::Format(_)
                | Error::Io(_)
        )
    }
}
