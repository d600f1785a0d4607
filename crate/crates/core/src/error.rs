use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid label {0}: labels must be -1 or +1")]
    InvalidLabel(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at iteration {iter}: {what}")]
    Divergence { iter: usize, what: String },

    #[error("oracle did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("threshold not met: lhs {lhs} > rhs {rhs} ({what})")]
    Threshold { what: String, lhs: f64, rhs: f64 },

    #[error("check failed: {0}")]
    Assertion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonConvergence { .. } => 2,
            Error::Assertion(_) | Error::Threshold { .. } => 3,
            _ => 1,
        }
    }
}
