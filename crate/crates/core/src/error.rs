use std::io;

use thiserror::Error;

/// Errors produced anywhere in the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    /// A binary or text file did not match its declared layout.
    #[error("format error in field `{field}`: {message}")]
    Format { field: &'static str, message: String },

    #[error("row {row} has zero Euclidean norm")]
    ZeroNorm { row: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(field: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }
}
