use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input bytes are not in the expected file format.
    #[error("format error: {0}")]
    Format(String),

    /// A payload is shorter or longer than its header declares.
    #[error("length error: {0}")]
    Length(String),

    #[error("invalid normalization: {0}")]
    InvalidSpec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible shape: {0}")]
    Shape(String),

    /// A loss, gradient or chain state stopped being finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
