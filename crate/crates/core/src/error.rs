use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Riccati equation has no stabilizing solution: {0}")]
    NoStabilizingSolution(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not positive semidefinite (pivot {pivot:e} at index {index})")]
    NotPositiveSemidefinite { index: usize, pivot: f64 },

    #[error("k-way Lyapunov operator is singular: {0}")]
    SingularOperator(String),

    #[error(
        "iterative solve stopped after {iterations} iterations with relative residual {residual:e}"
    )]
    IterationLimitExceeded { iterations: usize, residual: f64 },

    #[error("drift polynomial of degree {0} is not supported (max 3)")]
    UnsupportedDrift(usize),

    #[error("degree {degree} is outside the supported range {min}..={max}")]
    DegreeOutOfRange {
        degree: usize,
        min: usize,
        max: usize,
    },

    #[error("objective is not finite at sample {sample}; window too large for this degree")]
    NonFiniteObjective { sample: usize },

    #[error("finite element assembly: {0}")]
    Assembly(String),

    #[error("integrator step failure at t = {t}: {reason}")]
    IntegratorStepFailure { t: f64, reason: String },

    #[error("closed-loop run was unstable and is excluded from error statistics")]
    UnstableExcluded,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("window {window} failed: {source}")]
    WindowFailed {
        window: usize,
        /// Factor from the last window that finished, row-major lower-trapezoid values.
        last_factor: Option<Vec<f64>>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
