use std::fmt;
use std::io;

/// Errors produced by dataset ingestion, training and model persistence.
#[derive(Debug)]
pub enum Error {
    /// I/O failure, annotated with the path that was touched.
    Io { path: String, source: io::Error },
    /// Malformed text input (CSV or event file); `line` is 1-based.
    Parse { path: String, line: usize, msg: String },
    /// Binary file is truncated or inconsistent; `section` names what failed.
    Corrupt { path: String, section: String },
    /// Magic or version mismatch when reading a binary file.
    Version { path: String, msg: String },
    /// Matrix/vector dimensions do not agree.
    Dimension(String),
    /// Invalid configuration or argument value.
    Config(String),
    /// Input data is degenerate for the requested operation.
    Degenerate(String),
    /// A database modification event violates its preconditions.
    Event(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
            Error::Parse { path, line, msg } => {
                write!(f, "parse error in {path} at line {line}: {msg}")
            }
            Error::Corrupt { path, section } => {
                write!(f, "corrupt model file {path}: bad or missing section `{section}`")
            }
            Error::Version { path, msg } => write!(f, "unsupported file {path}: {msg}"),
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
            Error::Event(msg) => write!(f, "invalid modification event: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
