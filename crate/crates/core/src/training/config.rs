use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "HDTR_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub log_every: u64,
    /// Where the final checkpoint is written.
    pub checkpoint: Option<PathBuf>,
    /// Line-delimited training log.
    pub log: Option<PathBuf>,
    pub model: Architecture,
    pub ablations: Ablations,
    pub loss: LossConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub base_channels: usize,
    pub fgff_stages: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub use_cf: bool,
    pub use_reference_branch: bool,
    pub use_perc_loss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_gan: f64,
    pub lambda_perc: f64,
    pub lambda_rec: f64,
    /// `"toy"` for the built-in fixed extractor, otherwise a safetensors path.
    pub extractor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        frames: usize,
        #[serde(default = "default_frame_side")]
        width: usize,
        #[serde(default = "default_frame_side")]
        height: usize,
    },
    /// One subdirectory per video under `frames`, mirrored under `landmarks`; or a flat
    /// directory treated as a single video.
    Directory { frames: PathBuf, landmarks: PathBuf },
}

fn default_frame_side() -> usize {
    128
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 1000,
            learning_rate: 1e-4,
            batch_size: 12,
            log_every: 10,
            checkpoint: None,
            log: None,
            model: Architecture::default(),
            ablations: Ablations::default(),
            loss: LossConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl Default for Architecture {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            base_channels: m.base_channels,
            fgff_stages: m.fgff_stages,
        }
    }
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            use_cf: true,
            use_reference_branch: true,
            use_perc_loss: true,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_gan: w.lambda_gan,
            lambda_perc: w.lambda_perc,
            lambda_rec: w.lambda_rec,
            extractor: "toy".into(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            frames: 16,
            width: default_frame_side(),
            height: default_frame_side(),
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_gan: self.lambda_gan,
            lambda_perc: self.lambda_perc,
            lambda_rec: self.lambda_rec,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file and applies [`SEED_ENV`] when set.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an integer")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.model_config().validate()?;
        self.effective_weights().validate()?;
        if let DataConfig::Synthetic { frames, .. } = self.data {
            if frames < 2 {
                return Err(Error::Config("synthetic data needs at least 2 frames".into()));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            base_channels: self.model.base_channels,
            fgff_stages: self.model.fgff_stages,
            use_cf: self.ablations.use_cf,
            use_reference_branch: self.ablations.use_reference_branch,
            ..ModelConfig::default()
        }
    }

    /// Loss weights with the perceptual term zeroed when that ablation is active.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss.weights();
        if !self.ablations.use_perc_loss {
            w.lambda_perc = 0.0;
        }
        w
    }
}
