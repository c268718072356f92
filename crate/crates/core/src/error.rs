use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed skeleton file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },

    #[error("non-finite coordinate in frame {frame}, body {body}, joint {joint}")]
    NonFiniteCoordinate { frame: usize, body: usize, joint: usize },

    #[error("sequence has no frame with a tracked body")]
    EmptySequence,

    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),

    #[error("sequence too short: need at least {needed} frames, got {got}")]
    SequenceTooShort { needed: usize, got: usize },

    #[error("series dimension mismatch: {0} vs {1} channels")]
    DimensionMismatch(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("bad binary file {path}: {reason}")]
    BadBinary { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(line: usize, reason: impl Into<String>) -> Self {
        Error::MalformedFile { line, reason: reason.into() }
    }
}
