use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or experiment description is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch at layer `{layer}`: expected {expected:?}, got {got:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl Error {
    /// Attaches round context to an error produced while running a round.
    pub fn in_round(self, round: usize) -> Error {
        match self {
            Error::Numeric(m) => Error::Numeric(format!("round {round}: {m}")),
            Error::Internal(m) => Error::Internal(format!("round {round}: {m}")),
            Error::Input(m) => Error::Input(format!("round {round}: {m}")),
            other => other,
        }
    }
}
