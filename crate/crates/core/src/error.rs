use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    InputShape { expected: usize, actual: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("network must be in evaluation mode for {0}")]
    NotFrozen(&'static str),

    #[error("ledger: {0}")]
    Ledger(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("alignment mismatch at row {row}: {detail}")]
    Alignment { row: usize, detail: String },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("inconsistent dataset: {0}")]
    Consistency(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unsupported export: {0}")]
    UnsupportedExport(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by invalid user input rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Label { .. }
                | Error::InputShape { .. }
                | Error::Format { .. }
                | Error::Consistency(_)
                | Error::Alignment { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::UnsupportedExport(_)
        )
    }
}
