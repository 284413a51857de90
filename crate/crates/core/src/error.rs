use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward called without a train-mode forward context")]
    MissingContext,
    #[error("unsupported wav format: {0}")]
    WavFormat(String),
    #[error("wav i/o: {0}")]
    Wav(#[from] hound::Error),
    #[error("checkpoint not found: {}", .0.display())]
    CheckpointNotFound(PathBuf),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-parsable category used by the command-line front-end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape-mismatch",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NonFinite(_) => "non-finite",
            Error::MissingContext => "missing-context",
            Error::WavFormat(_) | Error::Wav(_) => "wav-format",
            Error::CheckpointNotFound(_) => "checkpoint-not-found",
            Error::Checkpoint(_) => "checkpoint-invalid",
            Error::Config(_) => "config-invalid",
            Error::Io(_) => "io",
            Error::Manifest(_) | Error::Json(_) => "manifest-invalid",
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
