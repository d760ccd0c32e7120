use thiserror::Error;

use crate::geometry::Cell;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell ({}, {}) outside {width}x{height} grid", cell.x, cell.y)]
    OutOfBounds { cell: Cell, width: usize, height: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed {format}: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { format, reason: reason.into() }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
