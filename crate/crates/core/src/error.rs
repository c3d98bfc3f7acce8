use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error at record {record} (line {line}), field `{field}`: {message}")]
    Ingest {
        record: usize,
        line: usize,
        field: String,
        message: String,
    },

    #[error("shape mismatch in `{op}`: {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("phase `{phase}` failed at step {step}: {source}")]
    Phase {
        phase: &'static str,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_phase(self, phase: &'static str, step: usize) -> Self {
        Error::Phase {
            phase,
            step,
            source: Box::new(self),
        }
    }
}
