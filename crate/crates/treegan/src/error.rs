use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the attempted operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A contract on an operation's inputs was violated.
    #[error("{0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A non-finite value (NaN/Inf) showed up where only finite values are allowed.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Index out of range.
    #[error("index {index} out of range (limit {limit}) in {what}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// Malformed or unsupported file content.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// File-format level failure (bad magic, version, checksum, truncation).
    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
