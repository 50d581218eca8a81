//! Error types shared across the workbench.

use thiserror::Error;

/// Errors produced by tensor ops, models, attacks, defenses and the
/// evaluation kit.
#[derive(Debug, Error)]
pub enum ArwError {
    /// Shapes of the operands do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An index (e.g. a class label) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A serialized artifact (checkpoint, PPM, manifest) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A run configuration references something that does not exist
    /// or contains an unknown key.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ArwError>;

impl ArwError {
    pub fn dimension(msg: impl Into<String>) -> Self {
        ArwError::Dimension(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        ArwError::Contract(msg.into())
    }

    pub fn index(msg: impl Into<String>) -> Self {
        ArwError::Index(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        ArwError::Format(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        ArwError::Config(msg.into())
    }
}
