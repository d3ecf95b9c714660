use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Format,
    Parameter,
    Validation,
    Config,
    External,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch: header declares {expected} values, payload carries {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("{} invalid manifest row(s): {}", .0.len(), format_rows(.0))]
    InvalidRows(Vec<RowError>),

    #[error("template error: unknown placeholder(s) {0:?}")]
    UnknownPlaceholder(Vec<String>),

    #[error("cannot parse exemplar response: {0}")]
    UnparseableResponse(String),

    #[error("no verified exemplars for task '{0}'; ingest exemplars first")]
    EmptyPool(String),

    #[error("task mismatch: expected '{expected}', found '{found}'")]
    TaskMismatch { expected: String, found: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("external model client failed: {0}")]
    Client(String),
}

/// One rejected manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub index: usize,
    pub reason: String,
}

fn format_rows(rows: &[RowError]) -> String {
    rows.iter()
        .map(|r| format!("row {}: {}", r.index, r.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::MalformedHeader(_)
            | Error::ShapeMismatch { .. }
            | Error::NonFinite { .. }
            | Error::Parse(_)
            | Error::UnparseableResponse(_) => ErrorKind::Format,
            Error::Dimension(_) | Error::Parameter(_) | Error::TaskMismatch { .. } => {
                ErrorKind::Parameter
            }
            Error::InvalidRows(_) | Error::UnknownPlaceholder(_) | Error::EmptyPool(_) => {
                ErrorKind::Validation
            }
            Error::Config(_) => ErrorKind::Config,
            Error::Client(_) => ErrorKind::External,
        }
    }
}
