use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unmapped tag `{0}`")]
    UnmappedTag(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token index {index} out of range for sentence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("feature `{0}` is not in the model")]
    MissingFeature(String),

    #[error("{source_name} declared dimension {expected} but emitted {actual}")]
    DimensionMismatch {
        source_name: String,
        expected: usize,
        actual: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}
