use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("bad magic bytes in image stack file")]
    BadMagic,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("data format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for configuration, 3 for data format, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_) => 2,
            Error::Numerical(_) | Error::Invariant(_) => 4,
            _ => 3,
        }
    }
}
