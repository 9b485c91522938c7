use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shapes or channel counts do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Non-finite values, singular systems, or degenerate statistics.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input lies outside the domain of a map (matrix log, lifting, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Two elements from different groups were combined.
    #[error("group mismatch: {left} vs {right}")]
    GroupMismatch { left: String, right: String },

    /// A subset size exceeds the population size.
    #[error("size error: requested {requested} of {available}")]
    Size { requested: usize, available: usize },

    /// A primitive or group feature outside what is implemented.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Invalid model, run, or file configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
