use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, data handling, and training.
#[derive(Debug)]
pub enum Error {
    /// Shape or axis mismatch between operands.
    Shape(String),
    /// Invalid configuration value or inconsistent config.
    Config(String),
    /// Misuse of the differentiation machinery (non-scalar backward, double backward).
    Autograd(String),
    /// Numeric failure: NaN/Inf where finite values are required.
    Numeric(String),
    /// Invalid data content (labels out of range, malformed dataset).
    Data(String),
    /// Malformed file: bad magic, truncation, corrupt payload.
    Format(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Autograd(msg) => write!(f, "autograd error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
