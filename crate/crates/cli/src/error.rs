use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, unreadable or inconsistent inputs.
    #[error("usage error: {0}")]
    Usage(String),
    /// A contract, invariant or freeze check failed.
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Contract(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<sbp_core::Error> for CliError {
    fn from(e: sbp_core::Error) -> Self {
        use sbp_core::Error as E;
        match e {
            E::Divergence(_) => CliError::Divergence(e.to_string()),
            E::Parse { .. } | E::Io(_) => CliError::Usage(e.to_string()),
            E::Contract(_) | E::FreezeViolation(_) | E::Validation(_) | E::Internal(_) => {
                CliError::Contract(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
