use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op} requires a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("matrix is not symmetric: max |m_ij - m_ji| = {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {last_estimate})")]
    NoConvergence {
        iterations: usize,
        last_estimate: f64,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid regression problem: {0}")]
    InvalidProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::InvalidModel(_) => ErrorKind::Config,
            Error::NoConvergence { .. } | Error::NonFinite { .. } => ErrorKind::Numerical,
            Error::DimensionMismatch { .. }
            | Error::NotSquare { .. }
            | Error::NotSymmetric { .. }
            | Error::InvalidGraph(_)
            | Error::InvalidTopology(_)
            | Error::InvalidProblem(_)
            | Error::Parse { .. }
            | Error::InvalidData(_)
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
