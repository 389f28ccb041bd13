use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error on {field}: {message}")]
    Validation { field: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("scene generation failed at scene {scene_index}: {message}")]
    Generation { scene_index: usize, message: String },

    #[error("model fitting failed: {0}")]
    Fit(String),

    #[error("scene id mismatch; ids present in only one file: {0:?}")]
    SceneMismatch(Vec<u64>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Generation { .. } => "generation",
            Error::Fit(_) => "fit",
            Error::SceneMismatch(_) => "scene_mismatch",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Other(_) => "other",
        }
    }
}
