use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::data::{build_sample, BatchTensors, FrameStore, Sample};
use crate::error::{Error, Result};
use crate::losses::{self, GeneratorLosses, LossWeights, PerceptualExtractor};
use crate::model::{Discriminator, Generator};

/// Seed of the fixed perceptual extractor; independent of the training seed.
pub const EXTRACTOR_SEED: u64 = 0x5EED_F00D;

/// Scalar losses of one optimization step; one line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub perc: f64,
    pub rec: f64,
    pub g_total: f64,
    pub wall_time_s: f64,
}

pub struct Trainer {
    config: TrainConfig,
    weights: LossWeights,
    generator: Generator,
    discriminator: Discriminator,
    extractor: Option<PerceptualExtractor>,
    opt_g: AdamW,
    opt_d: AdamW,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
    started: Instant,
}

pub fn load_extractor(spec: &str, dtype: DType, device: &Device) -> Result<PerceptualExtractor> {
    match spec {
        "toy" => PerceptualExtractor::toy(EXTRACTOR_SEED, dtype, device),
        "" | "none" => Err(Error::Config(
            "perceptual loss is enabled but no extractor is configured".into(),
        )),
        path => PerceptualExtractor::from_safetensors(Path::new(path), dtype, device),
    }
}

impl Trainer {
    pub fn new(config: &TrainConfig, device: &Device) -> Result<Self> {
        Self::with_dtype(config, DType::F32, device)
    }

    pub fn with_dtype(config: &TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let model = config.model_config();
        let weights = config.effective_weights();
        let generator = Generator::new(&model, config.seed, dtype, device)?;
        let discriminator =
            Discriminator::new(model.base_channels, config.seed.wrapping_add(1), dtype, device)?;
        let extractor = if weights.lambda_perc > 0.0 {
            Some(load_extractor(&config.loss.extractor, dtype, device)?)
        } else {
            None
        };
        let adam = ParamsAdamW {
            lr: config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let opt_g = AdamW::new(generator.params().vars(), adam.clone())?;
        let opt_d = AdamW::new(discriminator.params().vars(), adam)?;
        Ok(Self {
            config: config.clone(),
            weights,
            generator,
            discriminator,
            extractor,
            opt_g,
            opt_d,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)),
            order: Vec::new(),
            cursor: 0,
            step: 0,
            started: Instant::now(),
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Next `min(batch_size, usable frames)` distinct samples, cycling through a reshuffled
    /// order each epoch.
    pub fn next_batch(&mut self, store: &FrameStore) -> Result<Vec<Sample>> {
        let usable = store.usable();
        if usable.len() < 2 {
            return Err(Error::Data(format!(
                "training needs at least 2 frames with landmarks, found {}",
                usable.len()
            )));
        }
        let size = self.config.batch_size.min(usable.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor >= self.order.len() {
                self.order = usable.clone();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let index = self.order[self.cursor];
            self.cursor += 1;
            if batch.iter().any(|s: &Sample| s.index == index) {
                continue;
            }
            if let Some(s) = build_sample(store, index, &mut self.rng)? {
                batch.push(s);
            }
        }
        Ok(batch)
    }

    /// One discriminator update on the detached generator output, then one generator update.
    pub fn train_step(&mut self, batch: &[Sample]) -> Result<StepMetrics> {
        let dtype = self.generator.params().dtype();
        let device = self.generator.params().device().clone();
        let t = BatchTensors::new(batch, dtype, &device)?;
        let step = self.step + 1;
        let indices: Vec<usize> = batch.iter().map(|s| s.index).collect();

        let fake = self.generator.forward(&t.masked, &t.contour, &t.reference)?;

        let d_real = self.discriminator.forward(&t.target)?;
        let d_fake = self.discriminator.forward(&fake.detach())?;
        let d_loss = losses::d_loss(&d_real, &d_fake)?;
        let d_val = scalar(&d_loss)?;
        check_finite(step, &indices, "d_loss", d_val)?;
        self.opt_d.backward_step(&d_loss)?;

        let zero = Tensor::zeros((), dtype, &device)?;
        let adv = if self.weights.lambda_gan > 0.0 {
            losses::g_adv_loss(&self.discriminator.forward(&fake)?)?
        } else {
            zero.clone()
        };
        let perc = if self.weights.lambda_perc > 0.0 {
            losses::perc_loss(&t.target, &fake, self.extractor.as_ref())?
        } else {
            zero
        };
        let rec = losses::rec_loss(&t.target, &fake)?;
        let parts = GeneratorLosses { adv, perc, rec };
        let total = losses::total_g_loss(&parts, &self.weights)?;
        let metrics = StepMetrics {
            step,
            d_loss: d_val,
            g_adv: scalar(&parts.adv)?,
            perc: scalar(&parts.perc)?,
            rec: scalar(&parts.rec)?,
            g_total: scalar(&total)?,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        for (name, v) in [
            ("g_adv", metrics.g_adv),
            ("perc", metrics.perc),
            ("rec", metrics.rec),
            ("g_total", metrics.g_total),
        ] {
            check_finite(step, &indices, name, v)?;
        }
        self.opt_g.backward_step(&total)?;
        self.step = step;
        Ok(metrics)
    }

    /// Runs the configured number of steps, reporting each one.
    pub fn run(&mut self, store: &FrameStore, mut on_step: impl FnMut(&StepMetrics) -> Result<()>) -> Result<StepMetrics> {
        let mut last = None;
        while self.step < self.config.steps {
            let batch = self.next_batch(store)?;
            let m = self.train_step(&batch)?;
            on_step(&m)?;
            last = Some(m);
        }
        last.ok_or_else(|| Error::Config("steps must be at least 1".into()))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        for (prefix, store) in [
            ("generator", self.generator.params()),
            ("discriminator", self.discriminator.params()),
        ] {
            for (name, var) in store.named_vars() {
                tensors.insert(format!("{prefix}.{name}"), var.as_tensor().copy().expect("cpu copy"));
            }
        }
        Checkpoint {
            model: self.generator.config().clone(),
            step: self.step,
            tensors,
        }
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn check_finite(step: u64, indices: &[usize], name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            step,
            indices: indices.to_vec(),
            detail: format!("{name} = {v}"),
        })
    }
}

/// Rebuilds the generator stored in a checkpoint.
pub fn generator_from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Generator> {
    let g = Generator::new(&ck.model, 0, DType::F32, device)?;
    g.params().load(&ck.section("generator"))?;
    Ok(g)
}
