//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by the training engine and its subsystems.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input (reward, logprob, parameter, gradient) was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration key or value could not be accepted.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A token id was outside the policy's vocabulary or illegal at its position.
    #[error("invalid token {token} at position {position}")]
    InvalidToken { token: u32, position: usize },

    /// A task referenced a template family the generator does not know.
    #[error("unknown template family: {0}")]
    UnknownFamily(String),

    /// A file had the wrong magic, version, or layout.
    #[error("format error: {0}")]
    Format(String),

    /// The training loop hit non-finite parameters and stopped.
    #[error("run aborted at step {step}: {reason}")]
    RunAborted { step: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
