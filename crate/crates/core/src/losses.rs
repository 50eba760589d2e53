//! Least-squares adversarial, reconstruction and perceptual losses.
//!
//! All norms are element means, so loss magnitudes do not depend on resolution.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::blocks::{leaky_relu, max_pool2};
use crate::model::conv::Conv2d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_perc: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gan: 0.1,
            lambda_perc: 1.0,
            lambda_rec: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_gan, self.lambda_perc, self.lambda_rec];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `½·mean((d_real − 1)²) + ½·mean(d_fake²)`.
///
/// `d_fake` must come from a detached generator output.
pub fn d_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    same_shape(d_real, d_fake, "discriminator maps")?;
    let real = (d_real - 1.0)?.sqr()?.mean_all()?;
    let fake = d_fake.sqr()?.mean_all()?;
    Ok(((real + fake)? * 0.5)?)
}

/// `½·mean((d_fake − 1)²)`.
pub fn g_adv_loss(d_fake: &Tensor) -> Result<Tensor> {
    Ok(((d_fake - 1.0)?.sqr()?.mean_all()? * 0.5)?)
}

/// `mean(|g − o|) + mean((g − o)²)`.
pub fn rec_loss(target: &Tensor, output: &Tensor) -> Result<Tensor> {
    same_shape(target, output, "reconstruction")?;
    let diff = (target - output)?;
    Ok((diff.abs()?.mean_all()? + diff.sqr()?.mean_all()?)?)
}

/// Frozen convolutional feature extractor. Each stage is `conv3×3 → LeakyReLU → maxpool2`;
/// the feature taps are the pooled outputs.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    stages: Vec<Conv2d>,
}

/// Channel widths of the built-in toy extractor.
pub const TOY_EXTRACTOR_WIDTHS: [usize; 3] = [8, 16, 32];

impl PerceptualExtractor {
    /// Randomly initialized extractor with fixed weights; needs no downloaded data.
    pub fn toy(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = 3;
        let mut stages = Vec::new();
        for &c_out in &TOY_EXTRACTOR_WIDTHS {
            let fan_in = c_in * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..c_out * fan_in)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let w = Tensor::from_vec(w, (c_out, c_in, 3, 3), device)?.to_dtype(dtype)?;
            stages.push(Conv2d::new(w, None, 1, 1));
            c_in = c_out;
        }
        Ok(Self { stages })
    }

    /// Loads `stage{k}.weight` / optional `stage{k}.bias` tensors, in order, from a
    /// safetensors file. A pretrained network's early conv layers can be exported this way.
    pub fn from_safetensors(path: &Path, dtype: DType, device: &Device) -> Result<Self> {
        let tensors = candle_core::safetensors::load(path, device)?;
        let mut stages = Vec::new();
        while let Some(w) = tensors.get(&format!("stage{}.weight", stages.len())) {
            let b = tensors.get(&format!("stage{}.bias", stages.len()));
            let w = w.to_dtype(dtype)?;
            let b = b.map(|b| b.to_dtype(dtype)).transpose()?;
            stages.push(Conv2d::new(w, b, 1, 1));
        }
        if stages.is_empty() {
            return Err(Error::Config(format!(
                "{} holds no stage0.weight tensor",
                path.display()
            )));
        }
        Ok(Self { stages })
    }

    pub fn num_taps(&self) -> usize {
        self.stages.len()
    }

    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut taps = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for conv in &self.stages {
            h = max_pool2(&leaky_relu(&conv.forward(&h)?)?)?;
            taps.push(h.clone());
        }
        Ok(taps)
    }
}

/// Sum over feature taps of `mean((φ(g) − φ(o))²)`.
pub fn perc_loss(
    target: &Tensor,
    output: &Tensor,
    extractor: Option<&PerceptualExtractor>,
) -> Result<Tensor> {
    let phi = extractor.ok_or_else(|| {
        Error::Config("perceptual loss requested but no feature extractor is configured".into())
    })?;
    same_shape(target, output, "perceptual")?;
    let fa = phi.features(target)?;
    let fb = phi.features(output)?;
    let mut total = Tensor::zeros((), output.dtype(), output.device())?;
    for (a, b) in fa.iter().zip(&fb) {
        total = (total + (a - b)?.sqr()?.mean_all()?)?;
    }
    Ok(total)
}

/// Generator-side loss terms, each a scalar tensor.
#[derive(Debug, Clone)]
pub struct GeneratorLosses {
    pub adv: Tensor,
    pub perc: Tensor,
    pub rec: Tensor,
}

/// `λ_gan·adv + λ_perc·perc + λ_rec·rec`.
pub fn total_g_loss(parts: &GeneratorLosses, w: &LossWeights) -> Result<Tensor> {
    w.validate()?;
    let adv = (&parts.adv * w.lambda_gan)?;
    let perc = (&parts.perc * w.lambda_perc)?;
    let rec = (&parts.rec * w.lambda_rec)?;
    Ok((adv + perc)?.add(&rec)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(v: f64, shape: &[usize]) -> Tensor {
        (Tensor::ones(shape, DType::F64, &Device::Cpu).unwrap() * v).unwrap()
    }

    fn scalar(t: Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn d_loss_examples() {
        let s = [1, 1, 6, 6];
        assert_eq!(scalar(d_loss(&full(1., &s), &full(0., &s)).unwrap()), 0.0);
        assert_eq!(scalar(d_loss(&full(0., &s), &full(1., &s)).unwrap()), 1.0);
        assert_eq!(scalar(d_loss(&full(0.5, &s), &full(0.5, &s)).unwrap()), 0.25);
        assert!(d_loss(&full(0., &s), &full(0., &[1, 1, 5, 5])).is_err());
    }

    #[test]
    fn g_adv_examples() {
        let s = [2, 1, 6, 6];
        assert_eq!(scalar(g_adv_loss(&full(1., &s)).unwrap()), 0.0);
        assert_eq!(scalar(g_adv_loss(&full(0., &s)).unwrap()), 0.5);
        assert_eq!(scalar(g_adv_loss(&full(-1., &s)).unwrap()), 2.0);
    }

    #[test]
    fn rec_examples() {
        let s = [1, 3, 8, 8];
        let a = Tensor::rand(0f64, 1., &s, &Device::Cpu).unwrap();
        assert_eq!(scalar(rec_loss(&a, &a).unwrap()), 0.0);
        assert_eq!(scalar(rec_loss(&full(1., &s), &full(0., &s)).unwrap()), 2.0);
        assert_eq!(scalar(rec_loss(&full(0.5, &s), &full(0., &s)).unwrap()), 0.75);
    }

    #[test]
    fn perc_identical_and_symmetric() {
        let phi = PerceptualExtractor::toy(0, DType::F64, &Device::Cpu).unwrap();
        let a = Tensor::rand(0f64, 1., (1, 3, 16, 16), &Device::Cpu).unwrap();
        let b = Tensor::rand(0f64, 1., (1, 3, 16, 16), &Device::Cpu).unwrap();
        assert_eq!(scalar(perc_loss(&a, &a, Some(&phi)).unwrap()), 0.0);
        let ab = scalar(perc_loss(&a, &b, Some(&phi)).unwrap());
        let ba = scalar(perc_loss(&b, &a, Some(&phi)).unwrap());
        assert!(ab > 0.0);
        assert_eq!(ab, ba);
    }

    #[test]
    fn perc_without_extractor_is_config_error() {
        let a = full(0., &[1, 3, 8, 8]);
        assert!(matches!(perc_loss(&a, &a, None), Err(Error::Config(_))));
    }

    #[test]
    fn weighted_total() {
        let parts = GeneratorLosses {
            adv: full(0.5, &[]),
            perc: full(0.2, &[]),
            rec: full(0.75, &[]),
        };
        let only_rec = LossWeights {
            lambda_gan: 0.0,
            lambda_perc: 0.0,
            lambda_rec: 1.0,
        };
        assert_eq!(scalar(total_g_loss(&parts, &only_rec).unwrap()), 0.75);
        let ones = LossWeights {
            lambda_gan: 1.0,
            lambda_perc: 1.0,
            lambda_rec: 1.0,
        };
        assert!((scalar(total_g_loss(&parts, &ones).unwrap()) - 1.45).abs() < 1e-12);
        let neg = LossWeights {
            lambda_gan: -0.1,
            ..ones
        };
        assert!(matches!(total_g_loss(&parts, &neg), Err(Error::Config(_))));
        let zero = LossWeights {
            lambda_gan: 0.0,
            lambda_perc: 0.0,
            lambda_rec: 0.0,
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn safetensors_extractor_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.safetensors");
        let mut map = std::collections::HashMap::new();
        map.insert("stage0.weight".to_string(), Tensor::ones((4, 3, 3, 3), DType::F32, &Device::Cpu).unwrap());
        map.insert("stage1.weight".to_string(), Tensor::ones((4, 4, 3, 3), DType::F32, &Device::Cpu).unwrap());
        candle_core::safetensors::save(&map, &path).unwrap();
        let phi = PerceptualExtractor::from_safetensors(&path, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(phi.num_taps(), 2);
        let empty = dir.path().join("empty.safetensors");
        let mut other = std::collections::HashMap::new();
        other.insert("x".to_string(), Tensor::ones(1, DType::F32, &Device::Cpu).unwrap());
        candle_core::safetensors::save(&other, &empty).unwrap();
        assert!(PerceptualExtractor::from_safetensors(&empty, DType::F32, &Device::Cpu).is_err());
    }
}
