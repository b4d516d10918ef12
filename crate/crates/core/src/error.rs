use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("corrupt pool indices: {0}")]
    CorruptIndices(String),

    #[error("build error: {0}")]
    Build(String),

    #[error("validation error at node {node}: {message}")]
    Validation { node: usize, message: String },

    #[error("cannot fold batch norm node {node}: {message}")]
    Fold { node: usize, message: String },

    #[error("execution error at node {node}: {message}")]
    Execution { node: usize, message: String },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("palette error: no color for class {class}")]
    Palette { class: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
