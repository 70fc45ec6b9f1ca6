use thiserror::Error;

/// Errors surfaced by the solvers and model routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("preconditioner failure after {attempts} attempt(s): iteration budget of {budget} exhausted, residual {residual:.3e} > target {target:.3e}")]
    PreconditionerFailure {
        attempts: usize,
        budget: usize,
        residual: f64,
        target: f64,
    },

    #[error("non-finite value encountered in {0}")]
    Numerical(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("convexity violated: second derivative {value:.3e} < 0 at row {row}")]
    ConvexityViolation { row: usize, value: f64 },

    #[error("least kernel eigenvalue {0:.3e} is not positive; the dataset likely contains duplicate or antipodal points")]
    NonPositiveLambda(f64),

    #[error("invalid dataset: {0}")]
    InvalidData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
