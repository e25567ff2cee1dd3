use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, solvers, and data ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A solver aborted; the last finite iterate is carried (converted to
    /// `f64`) so callers can inspect where it stalled.
    #[error("solver failure: {reason}")]
    SolverFailure {
        reason: String,
        last_iterate: Box<DMatrix<f64>>,
    },

    #[error("objective became non-finite: {0}")]
    NonFiniteObjective(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
