use thiserror::Error;

/// Errors raised by the coordination library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A caller broke an operation's precondition. These indicate bugs in the
    /// caller, not scenario conditions.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("device {0} is off-grid and not participating")]
    NotParticipating(String),

    #[error("infeasible optimization{}: {reason}", hour.map(|h| format!(" at hour {h}")).unwrap_or_default())]
    Infeasible { hour: Option<usize>, reason: String },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("{path}:{line}: {message}")]
    Load {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
