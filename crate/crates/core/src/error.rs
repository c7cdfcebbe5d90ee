use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("size mismatch: expected {expected} bytes of payload, found {found}")]
    SizeMismatch { expected: u64, found: u64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("index {index} has no known label but benchmark mode requires one")]
    UnlabeledInBenchmark { index: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    NumericalFailure { epoch: usize, loss: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("incompatible backbones: source has {source_rows} rows, target has {target_rows}")]
    IncompatibleBackbones { source_rows: usize, target_rows: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("label for index {index} rejected: {reason}")]
    Rejected { index: usize, reason: String },

    #[error("not ready: {0}")]
    NotReady(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
