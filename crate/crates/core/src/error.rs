use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },

    #[error("invalid config `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("row {row} has zero norm; cosine similarity is undefined")]
    ZeroNorm { row: usize },

    #[error("partition function of row {row} underflowed to zero; use a larger temperature")]
    Underflow { row: usize },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
