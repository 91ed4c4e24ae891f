//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A configuration value is outside its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Dataset layout or content problem (missing masks, orphan frames, ...).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A numeric failure: non-finite values where finiteness is required.
    #[error("non-finite value in {context}{detail}")]
    NonFinite { context: String, detail: String },

    /// Checkpoint payload failed its CRC32 check.
    #[error("checkpoint CRC mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    /// Checkpoint magic or version is not one this build understands.
    #[error("checkpoint version mismatch in {path}: {detail}")]
    VersionMismatch { path: PathBuf, detail: String },

    /// Checkpoint entry does not match the expected layer shape.
    #[error("checkpoint shape mismatch for entry '{entry}': expected {expected:?}, got {got:?}")]
    CheckpointShape {
        entry: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

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

    pub fn non_finite(context: impl Into<String>, detail: impl Into<String>) -> Self {
        let detail = detail.into();
        Error::NonFinite {
            context: context.into(),
            detail: if detail.is_empty() {
                String::new()
            } else {
                format!(": {detail}")
            },
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
