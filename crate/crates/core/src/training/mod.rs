//! Data assembly, alternating adversarial optimization and checkpointing.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod synth;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{Ablations, Architecture, DataConfig, LossConfig, TrainConfig, SEED_ENV};
pub use data::{build_sample, BatchTensors, FrameStore, MouthTriplet, Sample};
pub use synth::{synthesize_faces, synthesize_video, SyntheticFrame, ToyFace};
pub use trainer::{generator_from_checkpoint, load_extractor, StepMetrics, Trainer};

use candle_core::Device;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// `n_frames` independent synthetic faces as a one-video store.
pub fn synthesize_toy_dataset(n_frames: usize, width: usize, height: usize, seed: u64) -> Result<FrameStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FrameStore::from_synthetic(synthesize_faces(n_frames, width, height, &mut rng)?)
}

pub fn load_store(config: &TrainConfig) -> Result<FrameStore> {
    match &config.data {
        DataConfig::Synthetic {
            frames,
            width,
            height,
        } => synthesize_toy_dataset(*frames, *width, *height, config.seed),
        DataConfig::Directory { frames, landmarks } => FrameStore::load_dirs(frames, landmarks),
    }
}

/// Trains per `config`, appending one JSON line per logged step to `config.log`, and
/// writes the final checkpoint to `config.checkpoint`.
pub fn train(config: &TrainConfig, device: &Device) -> Result<(Trainer, StepMetrics)> {
    use std::io::Write;

    let store = load_store(config)?;
    let mut trainer = Trainer::new(config, device)?;
    let mut log = match &config.log {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => None,
    };
    let every = config.log_every.max(1);
    let last = trainer.run(&store, |m| {
        if m.step % every == 0 || m.step == config.steps || m.step == 1 {
            tracing::info!(step = m.step, d = m.d_loss, rec = m.rec, perc = m.perc, adv = m.g_adv, "train");
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut *w, m).map_err(|e| crate::Error::Data(e.to_string()))?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    })?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    if let Some(path) = &config.checkpoint {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        trainer.checkpoint().save(path)?;
    }
    Ok((trainer, last))
}
