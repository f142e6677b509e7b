use thiserror::Error;

/// Error type shared across the crate.
///
/// The variants map onto the CLI exit-code contract: `Config` -> 2,
/// `Parse`/`Data` -> 3, `Checkpoint` -> 4, `Io` -> 3 on data paths.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration: bad shapes, bad hyperparameters, unknown keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data, with the offending location when known.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// Data-level problem that is not tied to a single cell.
    #[error("data error: {0}")]
    Data(String),

    /// Unreadable or incompatible checkpoint.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}
