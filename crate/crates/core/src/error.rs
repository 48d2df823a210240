//! Crate-wide error type.

use std::fmt;

/// Alias over the crate error.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the pipeline.
#[derive(Debug)]
pub enum Error {
    /// Input series too short, odd-length where even is required, etc.
    Length(String),
    /// Tensor or series dimensions do not match the operation's contract.
    Shape(String),
    /// A parameter is outside its documented domain.
    Parameter(String),
    /// A PSD bin needed by whitening or SNR is zero or negative.
    SingularPsd(String),
    /// A declared input file or directory is absent.
    MissingInput(String),
    /// A numeric procedure failed (non-finite loss, unscalable waveform, ...).
    Numeric(String),
    /// A file exists but cannot be parsed as the expected format.
    Format(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Length(m) => write!(f, "length error: {m}"),
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Parameter(m) => write!(f, "parameter error: {m}"),
            Error::SingularPsd(m) => write!(f, "singular PSD: {m}"),
            Error::MissingInput(m) => write!(f, "missing input: {m}"),
            Error::Numeric(m) => write!(f, "numeric failure: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Missing-file constructor that keeps the offending path in the message.
    pub fn missing(path: &std::path::Path) -> Self {
        Error::MissingInput(path.display().to_string())
    }
}
