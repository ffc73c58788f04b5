use thiserror::Error;

/// Errors raised by the numeric kernel and the pipeline stages built on it.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, lengths).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A loss, gradient or update became non-finite.
    #[error("training diverged: {0}")]
    Divergence(String),
    /// An optimizer tried to touch frozen parameters, or a frozen checksum changed.
    #[error("freeze violation: {0}")]
    FreezeViolation(String),
    /// A persisted file could not be decoded.
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },
    /// A decoded value violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A state the algorithms guarantee unreachable was reached.
    #[error("internal logic error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
