use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied an argument that violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("model construction failed: {0}")]
    Construction(String),

    /// Non-finite loss or gradient during training.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    /// A loss or gradient value stopped being finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
