//! Harness-level error type: checkpoint format failures (each class
//! distinct, so tests and callers can match on them), configuration errors,
//! training aborts, and IO with paths attached.

use std::path::PathBuf;

use glyphspot_core::CoreError;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: corrupt header: {detail}")]
    CorruptHeader { path: PathBuf, detail: String },

    #[error("checkpoint {path}: format version {found}, supported {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },

    #[error(
        "checkpoint {path}: architecture fingerprint {found:#018x} does not match the \
         receiving architecture {expected:#018x}"
    )]
    ArchitectureMismatch { path: PathBuf, found: u64, expected: u64 },

    #[error("checkpoint {path}: tensor {name}: shape {found:?}, architecture has {expected:?}")]
    ShapeMismatch { path: PathBuf, name: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("checkpoint {path}: tensor {name} does not exist in the receiving architecture")]
    MissingTensor { path: PathBuf, name: String },

    #[error("non-finite loss in {stage} at iteration {iter}: {detail}")]
    NonFiniteLoss { stage: &'static str, iter: usize, detail: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    /// Wraps an IO error with the path it happened on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}
