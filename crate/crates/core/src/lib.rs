//! Mouth-region restoration for talking-face video: landmark-driven cropping, a
//! dual-encoder restoration generator with a patch discriminator, adversarial training,
//! no-reference sharpness metrics and frame-sequential inference.

pub mod error;
pub mod geometry;
pub mod image;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{CropMargin, CropTransform, LandmarkSet, CROP_SIZE};
pub use image::ImageF32;
pub use inference::{bench, BenchStats, ReferencePolicy, RestoreSession, RestoredFrame};
pub use model::{Discriminator, Generator, ModelConfig};
