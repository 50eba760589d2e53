use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid landmarks: {0}")]
    Landmarks(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint version mismatch: expected magic {expected:?}, found {found:?}")]
    CheckpointVersion { expected: String, found: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    CheckpointCorrupt { path: PathBuf, reason: String },

    #[error("non-finite loss at step {step} (batch sample indices {indices:?}): {detail}")]
    NonFiniteLoss {
        step: u64,
        indices: Vec<usize>,
        detail: String,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short identifier used by the CLI and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Landmarks(_) => "landmarks",
            Error::Data(_) => "data",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::CheckpointCorrupt { .. } => "checkpoint_corrupt",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Tensor(_) => "tensor",
            Error::Image(_) => "image",
            Error::Io(_) => "io",
        }
    }
}
