use thiserror::Error;

/// Errors raised by the numeric core, the model and the training harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for {what} of size {bound}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    /// A sequence did not have the exact length a scaling matrix was built for.
    #[error("fixed-length violation: expected {expected} tokens, got {actual}")]
    FixedLength { expected: usize, actual: usize },

    #[error("{0}")]
    Usage(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
