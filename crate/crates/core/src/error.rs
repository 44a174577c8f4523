use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Location inside a file where a reader gave up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    /// 1-based text line.
    Line(usize),
    /// Byte offset into a binary section.
    Byte(u64),
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::Line(n) => write!(f, "line {n}"),
            Position::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: invalid value {value} at index {index} (must be finite and >= 0)")]
    InvalidValue {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid wavelength axis: {0}")]
    InvalidAxis(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty overlap between channel '{channel}' and the spectral axis")]
    EmptyOverlap { channel: String },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {position}: {message}", path.display())]
    Format {
        path: PathBuf,
        position: Position,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, position: Position, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            position,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers themselves (rank deficiency,
    /// zero-volume simplices, non-convergence) rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
