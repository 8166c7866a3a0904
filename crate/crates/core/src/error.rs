use thiserror::Error;

use crate::abi::ErrorCode;

/// Errors surfaced by every layer of the stack.
///
/// Each variant corresponds to exactly one nonzero [`ErrorCode`], so an error
/// can always be reported through the standard ABI status record.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid handle: {0}")]
    InvalidHandle(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("pending communication at checkpoint: {0}")]
    PendingAtCheckpoint(String),
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::InvalidHandle(_) => ErrorCode::InvalidHandle,
            Error::KindMismatch(_) => ErrorCode::KindMismatch,
            Error::Truncated(_) => ErrorCode::Truncated,
            Error::PendingAtCheckpoint(_) => ErrorCode::PendingAtCheckpoint,
            Error::ReplayMismatch(_) => ErrorCode::ReplayMismatch,
            Error::BackendFailure(_) => ErrorCode::BackendFailure,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::BackendFailure(format!("i/o: {e}"))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
