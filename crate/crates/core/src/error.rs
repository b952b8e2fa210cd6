use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report. The CLI prints `category(): message`
/// and exits nonzero, so each variant maps to one stable category string.
#[derive(Debug, Error)]
pub enum Error {
    #[error("activation map is constant (max - min <= 1e-12)")]
    DegenerateMap,
    #[error("mask has no pixel above the threshold")]
    EmptyMask,
    #[error("downsampling ratio must be >= 1, got {0}")]
    InvalidRatio(f64),
    #[error("invalid bounding box {bbox:?} for a {height}x{width} image")]
    InvalidBBox {
        bbox: [usize; 4],
        height: usize,
        width: usize,
    },
    #[error("corrupt exemplar store: {0}")]
    CorruptStore(String),
    #[error("non-finite input to a Padé activation")]
    NonFiniteInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss in phase {phase}, epoch {epoch}: {detail}")]
    NonFiniteLoss {
        phase: usize,
        epoch: usize,
        detail: String,
    },
    #[error("budget exhausted: first exemplar of class {class} costs {cost} but the share is {share}")]
    BudgetExhausted { class: usize, cost: f64, share: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("dataset error at {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateMap | Error::EmptyMask => "mask",
            Error::InvalidRatio(_) | Error::InvalidBBox { .. } => "compression",
            Error::CorruptStore(_) => "store",
            Error::NonFiniteInput | Error::NonFiniteLoss { .. } => "numeric",
            Error::ShapeMismatch(_) => "shape",
            Error::BudgetExhausted { .. } => "memory",
            Error::InvalidSchedule(_) | Error::Config(_) => "config",
            Error::Dataset { .. } => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
