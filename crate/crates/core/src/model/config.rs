use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CROP_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// `(tanh(x) + 1) / 2`
    #[default]
    TanhRescaled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub fgff_stages: usize,
    /// `false` replaces every channel-fusion block by one channel-preserving convolution.
    pub use_cf: bool,
    /// `false` drops the reference encoder; the decoder then sees the main features only.
    pub use_reference_branch: bool,
    pub output_activation: OutputActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            fgff_stages: 3,
            use_cf: true,
            use_reference_branch: true,
            output_activation: OutputActivation::TanhRescaled,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.base_channels % 4 != 0 {
            return Err(Error::Config(format!(
                "base_channels must be a positive multiple of 4, got {}",
                self.base_channels
            )));
        }
        if self.fgff_stages == 0 {
            return Err(Error::Config("fgff_stages must be at least 1".into()));
        }
        // the hourglass at the bottleneck pools twice more
        let reduction = 1usize
            .checked_shl(self.fgff_stages as u32 + 2)
            .filter(|r| CROP_SIZE % r == 0);
        if reduction.is_none() {
            return Err(Error::Config(format!(
                "fgff_stages={} leaves a bottleneck of {}px that cannot be pooled twice",
                self.fgff_stages,
                CROP_SIZE >> self.fgff_stages.min(16)
            )));
        }
        Ok(())
    }

    /// Output widths of the encoder's downsampling stages.
    pub fn encoder_widths(&self) -> Vec<usize> {
        (0..self.fgff_stages)
            .map(|k| if k == 0 { self.base_channels } else { 2 * self.base_channels })
            .collect()
    }

    pub fn bottleneck_size(&self) -> usize {
        CROP_SIZE >> self.fgff_stages
    }

    /// Channels of one encoder's output (the hourglass doubles its input).
    pub fn bottleneck_channels(&self) -> usize {
        2 * self.encoder_widths().last().copied().unwrap_or(self.base_channels)
    }

    pub fn decoder_input_channels(&self) -> usize {
        let branches = if self.use_reference_branch { 2 } else { 1 };
        branches * self.bottleneck_channels()
    }

    /// Output widths of the decoder's upsampling stages, mirroring the encoder.
    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut levels = vec![self.base_channels];
        levels.extend(self.encoder_widths());
        levels.pop();
        levels.reverse();
        levels
    }
}
