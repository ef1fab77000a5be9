use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("empty mask")]
    EmptyMask,

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("degenerate batch: no anchor has a positive")]
    DegenerateBatch,

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("combinatorial blow-up: {count} candidate label tuples exceed cap {cap}")]
    CombinatorialBlowUp { count: u128, cap: u128 },

    #[error("non-finite loss at {context}")]
    NonFiniteLoss { context: String },

    #[error("no ground-truth instances to evaluate against")]
    NoGroundTruth,

    #[error("no evaluable frames")]
    NoEvaluableFrames,

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed (last good artifact: {last_good}): {source}")]
    Stage {
        stage: &'static str,
        last_good: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
