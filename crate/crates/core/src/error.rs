use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible truncation levels: {left} vs {right}")]
    IncompatibleLevels { left: usize, right: usize },

    #[error("arc length {t} outside [0, {length}]")]
    OutOfRange { t: f64, length: f64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("character has no points to normalize")]
    EmptyCharacter,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("format error in {source_name}: {message}")]
    Format { source_name: String, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            message: message.into(),
        }
    }
}
