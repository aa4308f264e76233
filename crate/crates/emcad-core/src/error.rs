use thiserror::Error;

/// Errors produced by tensor kernels, graph assembly, and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions do not satisfy an operation's preconditions.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid configuration (group counts, channel chains, file settings).
    #[error("config error: {0}")]
    Config(String),
    /// Malformed tensor/weight/config file.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
