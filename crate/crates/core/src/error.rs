use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Each variant maps onto one of the CLI exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular value iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Process exit code: 2 input, 3 degenerate, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Parse(_) | Error::Io(_) => 2,
            Error::Degenerate(_) => 3,
            Error::NoConvergence { .. } | Error::NonFinite { .. } | Error::Diverged { .. } => 4,
        }
    }
}
