//! Crate-wide error type and result alias.

/// Everything that can go wrong across the crate, from shape mismatches in
/// the autodiff engine to malformed checkpoints on disk.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape disagreement between operands; both shapes are named so the
    /// message is actionable without a debugger.
    #[error("{op}: dimension mismatch ({lhs:?} vs {rhs:?})")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation was invoked outside its stated contract
    /// (e.g. sampling more transitions than the buffer holds).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value, file, or flag.
    #[error("config error: {0}")]
    Config(String),

    /// A grid edit that would break a world invariant.
    #[error("invalid edit: {0}")]
    Edit(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed, truncated, or incompatible checkpoint data.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn edit(msg: impl Into<String>) -> Self {
        Error::Edit(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }

    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 3 for I/O problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Checkpoint(_) => 3,
            _ => 1,
        }
    }
}
