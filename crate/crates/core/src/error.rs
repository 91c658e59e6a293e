use std::path::PathBuf;

use thiserror::Error;

use crate::denoiser::DenoiserParams;

/// Broad failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    MissingResource,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step {t} out of range 0..={n}")]
    StepOutOfRange { t: usize, n: usize },

    #[error("non-finite value {what}")]
    NonFinite { what: String },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged {
        step: usize,
        loss: f64,
        last_good: Box<DenoiserParams>,
    },

    #[error("cannot place {requested} perturbed lines among {available} phase-encode lines")]
    ImageTooSmall { requested: usize, available: usize },

    #[error("slab events overlap at line {line}")]
    OverlappingEvents { line: usize },

    #[error("slab covering lines {start}..{end} exceeds {lines} phase-encode lines")]
    LineOutOfRange {
        start: usize,
        end: usize,
        lines: usize,
    },

    #[error("{path}: bad magic {found:?} at byte offset {offset}")]
    BadMagic {
        path: PathBuf,
        offset: u64,
        found: String,
    },

    #[error("{path}: unsupported {what} at byte offset {offset}")]
    Unsupported {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    #[error("{path}: truncated data, expected {expected} bytes from offset {offset}, found {found}")]
    Truncated {
        path: PathBuf,
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("image {id}: {source}")]
    InImage {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite { .. } | Error::NonFiniteActivation { .. } | Error::Diverged { .. } => {
                ErrorKind::Numerical
            }
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorKind::MissingResource
            }
            Error::InImage { source, .. } | Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
