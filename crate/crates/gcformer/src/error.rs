//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GcError {
    /// A caller passed something that violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced or encountered non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Dataset loading / parsing problems.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint serialization problems.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GcError>;

impl GcError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        GcError::InvalidArgument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        GcError::Numeric(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        GcError::Data(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        GcError::Checkpoint(msg.into())
    }
}
