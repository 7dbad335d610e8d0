use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or truncated file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    /// Operation invoked in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    /// The quantity is mathematically undefined for the given input.
    #[error("undefined result: {0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
                Error::Format(format!("truncated file: {io}"))
            }
            hound::Error::IoError(io) => Error::Io(io),
            hound::Error::FormatError(msg) => Error::Format(msg.to_string()),
            hound::Error::TooWide => Error::Unsupported("sample width too wide".into()),
            hound::Error::Unsupported => Error::Unsupported("unsupported WAV encoding".into()),
            hound::Error::InvalidSampleFormat => Error::Unsupported("invalid sample format".into()),
            other => Error::Format(other.to_string()),
        }
    }
}
