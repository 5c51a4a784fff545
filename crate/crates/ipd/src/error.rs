//! Error taxonomy shared by the library and the CLI.
//!
//! Every failure is classified into one of four severity families so the CLI
//! can map it to a stable process exit code: usage/configuration problems
//! (exit 2), data problems (exit 3), and numerical failures (exit 4).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, IpdError>;

#[derive(Debug, Error)]
pub enum IpdError {
    /// Bad flag values or inconsistent options supplied by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid method/estimand tags or option combinations.
    #[error("configuration error: {0}")]
    Config(String),

    /// A (method, estimand) pair or operation the library deliberately rejects.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed text input (formula grammar, CSV tokens).
    #[error("parse error: {0}")]
    Parse(String),

    /// Missing or misnamed columns.
    #[error("schema error: {0}")]
    Schema(String),

    /// Structurally valid input whose values violate an invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Rank-deficient or non-invertible system.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// Logistic coefficients diverging (data separable).
    #[error("separation detected: {0}")]
    Separation(String),

    /// Predictions carry no usable signal (e.g. zero variance).
    #[error("degenerate predictions: {0}")]
    DegeneratePredictions(String),

    /// Too many replicate-level failures in a resampling or Monte Carlo loop.
    #[error("failure rate exceeded: {0}")]
    FailureRate(String),
}

impl From<csv::Error> for IpdError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => IpdError::Io(io),
                other => IpdError::Parse(format!("CSV error: {other:?}")),
            }
        } else {
            IpdError::Parse(format!("CSV error: {e}"))
        }
    }
}

impl IpdError {
    /// Stable machine-readable tag for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            IpdError::Usage(_) => "usage",
            IpdError::Config(_) => "config",
            IpdError::Unsupported(_) => "unsupported",
            IpdError::Io(_) => "io",
            IpdError::Parse(_) => "parse",
            IpdError::Schema(_) => "schema",
            IpdError::Validation(_) => "validation",
            IpdError::Singular(_) => "singular",
            IpdError::NonConvergence(_) => "non_convergence",
            IpdError::Separation(_) => "separation",
            IpdError::DegeneratePredictions(_) => "degenerate_predictions",
            IpdError::FailureRate(_) => "failure_rate",
        }
    }

    /// Process exit code: 0 success, 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            IpdError::Usage(_) | IpdError::Config(_) | IpdError::Unsupported(_) => 2,
            IpdError::Io(_)
            | IpdError::Parse(_)
            | IpdError::Schema(_)
            | IpdError::Validation(_) => 3,
            IpdError::Singular(_)
            | IpdError::NonConvergence(_)
            | IpdError::Separation(_)
            | IpdError::DegeneratePredictions(_)
            | IpdError::FailureRate(_) => 4,
        }
    }
}
