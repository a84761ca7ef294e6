use thiserror::Error;

/// Errors produced by sketch construction, updates, and stream loading.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not match the operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A numerical backend failed (e.g. an SVD did not converge) or an
    /// input contained non-finite entries.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A stream row violated an algorithm precondition (norm range,
    /// timestamp ordering, normalization).
    #[error("input error: {0}")]
    Input(String),

    /// Configuration parameters are out of range or mutually inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A CSV stream file is malformed; `line` is 1-based.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
