use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// A forward pass, loss or optimizer produced NaN/inf.
    #[error("non-finite value in {stage} at index {index}")]
    NonFinite { stage: String, index: usize },

    /// Two points coincide where a positive distance is required.
    #[error("duplicate point at index {index}: k-th neighbour distance is zero")]
    DuplicatePoint { index: usize },

    #[error("missing depth map")]
    MissingDepth,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn non_finite(stage: impl Into<String>, index: usize) -> Self {
        Error::NonFinite {
            stage: stage.into(),
            index,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
