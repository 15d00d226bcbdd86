use std::io;

use thiserror::Error;

pub type Result<T, E = PunError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PunError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("{path}: {cause}")]
    Path { path: String, cause: io::Error },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("sentence of {len} tokens exceeds max_len {max}")]
    Length { len: usize, max: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),
}

impl PunError {
    pub fn arg(msg: impl Into<String>) -> Self {
        PunError::Argument(msg.into())
    }

    pub fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        PunError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn path(path: impl AsRef<std::path::Path>, cause: io::Error) -> Self {
        PunError::Path {
            path: path.as_ref().display().to_string(),
            cause,
        }
    }

    /// Process exit code: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PunError::Io(_) | PunError::Path { .. } => 2,
            _ => 1,
        }
    }
}
