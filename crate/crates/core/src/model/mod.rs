//! Restoration generator (two fine-grained feature fusion encoders and a decoder) and the
//! frame discriminator.

pub mod blocks;
pub mod config;
pub mod conv;
pub mod discriminator;
pub mod generator;
pub mod kernels;
pub mod params;

pub use blocks::{CfBlock, Fusion, HourglassBlock};
pub use config::{ModelConfig, OutputActivation};
pub use discriminator::Discriminator;
pub use generator::{Decoder, Fgff, Generator};
pub use params::ParamStore;
