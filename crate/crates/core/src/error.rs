//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor did not have the dimensions an operation requires.
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    /// A coordinate (e.g. an occlusion center) fell outside the image.
    #[error("{what} ({x}, {y}) outside image bounds {width}x{height}")]
    OutOfBounds {
        what: String,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    /// A pixel value or parameter violated a domain invariant.
    #[error("invalid value for {what}: {detail}")]
    Invalid { what: String, detail: String },

    /// A manifest line could not be parsed.
    #[error("manifest {path}, line {line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    /// A file referenced by a manifest does not exist or cannot be read.
    #[error("missing or unreadable file {path}: {detail}")]
    MissingFile { path: PathBuf, detail: String },

    /// Index into a dataset or batch out of range.
    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: String,
        index: usize,
        len: usize,
    },

    /// Checkpoint container is corrupt or incompatible with the configured
    /// architecture.
    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    /// A loss component became NaN or infinite during training.
    #[error("training fault: loss component '{component}' is not finite")]
    NonFinite { component: String },

    /// Configuration field failed validation.
    #[error("invalid config field '{field}': {detail}")]
    Config { field: String, detail: String },

    /// Evaluation protocol precondition violated.
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

impl Error {
    pub fn shape(what: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
