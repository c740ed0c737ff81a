use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Malformed on-disk data. `offset` is the byte position where decoding failed.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {version} at offset {offset}")]
    Version { version: u8, offset: u64 },
    #[error("truncated payload at offset {offset}: need {needed} bytes, file has {available}")]
    Truncated { offset: u64, needed: u64, available: u64 },
    #[error("extent overflow at offset {offset}: {detail}")]
    ExtentOverflow { offset: u64, detail: String },
    #[error("invalid field at offset {offset}: {detail}")]
    Invalid { offset: u64, detail: String },
    #[error("line {line}: {detail}")]
    Text { line: usize, detail: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Parse(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("singular transform: determinant {det:e}")]
    Singular { det: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no features for image {0:?}")]
    MissingFeatures(String),
    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }
}
