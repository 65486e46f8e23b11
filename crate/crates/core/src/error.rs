use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("matmul inner extents differ: {left:?} · {right:?}")]
    InnerExtent { left: Vec<usize>, right: Vec<usize> },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("timestep {t} outside schedule range [0, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("condition {c} outside [0, {max}]")]
    ConditionOutOfRange { c: usize, max: usize },

    #[error("unknown class {0}")]
    UnknownClass(usize),

    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("non-finite loss {loss} at step {step}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint has bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated")]
    Truncated,

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
