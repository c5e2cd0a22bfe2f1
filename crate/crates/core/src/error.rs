use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("malformed container {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ReconError {
    pub fn validation(msg: impl Into<String>) -> Self {
        ReconError::Validation(msg.into())
    }

    pub fn shape(expected: &[usize], actual: &[usize]) -> Self {
        ReconError::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ReconError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        ReconError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Machine-readable category, also used to pick the CLI exit code.
    pub fn category(&self) -> &'static str {
        match self {
            ReconError::Validation(_) | ReconError::Shape { .. } => "validation",
            ReconError::Config(_) => "config",
            ReconError::Checkpoint(_) => "checkpoint",
            ReconError::MissingData(_) => "missing_data",
            ReconError::Format { .. } => "format",
            ReconError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ReconError::Validation(_) | ReconError::Shape { .. } => 2,
            ReconError::Config(_) => 3,
            ReconError::Checkpoint(_) => 4,
            ReconError::MissingData(_) => 5,
            ReconError::Format { .. } => 6,
            ReconError::Io { .. } => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, ReconError>;
