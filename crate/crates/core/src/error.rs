use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("graph saturated: no family can produce a negative for {0:?}")]
    Saturated(crate::graph::Triple),

    #[error("non-finite loss at batch triple index {index} ({triple:?})")]
    NonFinite {
        index: usize,
        triple: crate::graph::Triple,
    },

    #[error("checkpoint section `{section}` failed to parse: {msg}")]
    Checkpoint { section: String, msg: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for data problems,
    /// 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
