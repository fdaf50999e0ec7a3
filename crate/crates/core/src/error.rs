use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform to an operation's requirements.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A class label or other index is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A file or byte buffer is not in the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// Configuration text or values are invalid.
    #[error("config error: {0}")]
    Config(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// An internal consistency check failed.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
