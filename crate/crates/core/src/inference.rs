//! Frame-sequential restoration with reference guidance, and latency benchmarking.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::error::{Error, Result};
use crate::geometry::{
    compute_crop_box, crop_frame, paste_back, prepare_mouth, CropMargin, LandmarkSet, CROP_SIZE,
};
use crate::image::{stack_images, ImageF32};
use crate::metrics::{score_image, MetricReport};
use crate::model::Generator;
use crate::training::checkpoint::Checkpoint;
use crate::training::data::{list_frames, sidecar_path};
use crate::training::generator_from_checkpoint;

/// Source of the reference image fed to the reference encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// The previous restored frame, re-aligned with the current crop box. The first frame
    /// uses its own crop.
    #[default]
    PreviousOutput,
    /// Each frame's own aligned crop.
    #[serde(rename = "self")]
    SelfFrame,
    /// One user-supplied still for every frame.
    FixedFrame,
}

impl FromStr for ReferencePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "previous_output" => Ok(Self::PreviousOutput),
            "self" => Ok(Self::SelfFrame),
            "fixed_frame" => Ok(Self::FixedFrame),
            other => Err(Error::Config(format!(
                "unknown reference policy {other:?} (expected previous_output, self or fixed_frame)"
            ))),
        }
    }
}

impl std::fmt::Display for ReferencePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PreviousOutput => "previous_output",
            Self::SelfFrame => "self",
            Self::FixedFrame => "fixed_frame",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RestoredFrame {
    pub image: ImageF32,
    /// Generator output crop; `None` for pass-through frames.
    pub crop: Option<ImageF32>,
    pub latency_s: Option<f64>,
}

pub struct RestoreSession {
    generator: Generator,
    policy: ReferencePolicy,
    fixed_reference: Option<ImageF32>,
    /// Last restored frame as it is written to disk.
    previous_output: Option<ImageF32>,
    /// Generator inputs and reference of the last restored frame. A frame whose inputs
    /// are unchanged reuses that reference, so repeated frames restore identically.
    held: Option<Held>,
    margin: CropMargin,
    blend_width: u32,
}

#[derive(Debug, Clone)]
struct Held {
    masked: ImageF32,
    contour: ImageF32,
    reference: ImageF32,
}

impl RestoreSession {
    pub fn new(generator: Generator, policy: ReferencePolicy) -> Self {
        Self {
            generator,
            policy,
            fixed_reference: None,
            previous_output: None,
            held: None,
            margin: CropMargin::default(),
            blend_width: 0,
        }
    }

    pub fn from_checkpoint(path: &Path, policy: ReferencePolicy) -> Result<Self> {
        let ck = Checkpoint::load(path, &Device::Cpu)?;
        Ok(Self::new(generator_from_checkpoint(&ck, &Device::Cpu)?, policy))
    }

    /// Sets the still used under [`ReferencePolicy::FixedFrame`]: either a 96×96 crop, or a
    /// full frame together with its landmarks.
    pub fn set_fixed_reference(&mut self, image: ImageF32, landmarks: Option<&LandmarkSet>) -> Result<()> {
        let crop = match landmarks {
            Some(lm) => {
                let t = compute_crop_box(lm, self.margin, (image.width(), image.height()))?;
                crop_frame(&image, &t)
            }
            None if image.width() == CROP_SIZE && image.height() == CROP_SIZE => image,
            None => {
                return Err(Error::Config(format!(
                    "fixed reference must be {CROP_SIZE}x{CROP_SIZE} or come with landmarks, got {}x{}",
                    image.width(),
                    image.height()
                )))
            }
        };
        self.fixed_reference = Some(crop);
        Ok(())
    }

    pub fn with_fixed_reference(mut self, image: ImageF32, landmarks: Option<&LandmarkSet>) -> Result<Self> {
        self.set_fixed_reference(image, landmarks)?;
        Ok(self)
    }

    pub fn with_blend_width(mut self, blend_width: u32) -> Self {
        self.blend_width = blend_width;
        self
    }

    pub fn with_margin(mut self, margin: CropMargin) -> Self {
        self.margin = margin;
        self
    }

    pub fn policy(&self) -> ReferencePolicy {
        self.policy
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn previous_output(&self) -> Option<&ImageF32> {
        self.previous_output.as_ref()
    }

    /// Forgets the previous output, as at the start of a new video.
    pub fn reset(&mut self) {
        self.previous_output = None;
        self.held = None;
    }

    pub fn restore_frame(&mut self, frame: &ImageF32, landmarks: Option<&LandmarkSet>) -> Result<RestoredFrame> {
        let Some(lm) = landmarks else {
            return Ok(RestoredFrame {
                image: frame.clone(),
                crop: None,
                latency_s: None,
            });
        };
        let t = compute_crop_box(lm, self.margin, (frame.width(), frame.height()))?;
        let mouth = prepare_mouth(frame, lm, &t)?;
        let reference = match self.policy {
            ReferencePolicy::SelfFrame => mouth.aligned.clone(),
            ReferencePolicy::FixedFrame => self
                .fixed_reference
                .clone()
                .ok_or_else(|| Error::Config("fixed_frame policy needs a reference image".into()))?,
            ReferencePolicy::PreviousOutput => match (&self.held, &self.previous_output) {
                (Some(h), _) if h.masked == mouth.masked && h.contour == mouth.contour => h.reference.clone(),
                (_, Some(prev)) if prev.width() == frame.width() && prev.height() == frame.height() => {
                    crop_frame(prev, &t)
                }
                (_, Some(_)) => {
                    warn!("frame size changed; using the frame's own crop as reference");
                    mouth.aligned.clone()
                }
                (_, None) => mouth.aligned.clone(),
            },
        };
        let p = self.generator.params();
        let (dtype, device) = (p.dtype(), p.device().clone());
        let batch = |img: &ImageF32| stack_images(&[img], dtype, &device);
        let (masked, contour, reference_t) = (batch(&mouth.masked)?, batch(&mouth.contour)?, batch(&reference)?);
        let start = Instant::now();
        let out = self.generator.forward(&masked, &contour, &reference_t)?;
        let crop = ImageF32::from_tensor(&out)?;
        let latency = start.elapsed().as_secs_f64();
        let image = paste_back(frame, &crop, &t, self.blend_width)?.quantized();
        if self.policy == ReferencePolicy::PreviousOutput {
            self.previous_output = Some(image.clone());
            self.held = Some(Held {
                masked: mouth.masked,
                contour: mouth.contour,
                reference,
            });
        }
        Ok(RestoredFrame {
            image,
            crop: Some(crop),
            latency_s: Some(latency),
        })
    }

    /// Restores every frame of `frames_dir` in lexicographic order into `out_dir`, keeping
    /// file names. Every frame needs a landmark sidecar; an empty sidecar marks a frame
    /// without a face, which is copied through unchanged and scored whole. Restored frames
    /// are scored on their 96×96 crop.
    pub fn restore_video(&mut self, frames_dir: &Path, landmarks_dir: &Path, out_dir: &Path) -> Result<Vec<MetricReport>> {
        let plan = plan_video(frames_dir, landmarks_dir)?;
        std::fs::create_dir_all(out_dir)?;
        self.reset();
        let mut reports = Vec::with_capacity(plan.len());
        for (frame_path, lm_path) in plan {
            let name = frame_path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let dest = out_dir.join(&name);
            let landmarks = LandmarkSet::load(&lm_path)?;
            let frame = ImageF32::load(&frame_path)?;
            if landmarks.is_none() {
                info!(frame = %name, "no landmarks; passed through");
                std::fs::copy(&frame_path, &dest)?;
                reports.push(score_image(&name, &frame, None)?);
                continue;
            }
            let restored = self.restore_frame(&frame, landmarks.as_ref())?;
            restored.image.save(&dest)?;
            let scored = restored.crop.as_ref().unwrap_or(&restored.image);
            reports.push(score_image(&name, scored, restored.latency_s)?);
        }
        Ok(reports)
    }
}

/// Pairs frames with their sidecars, failing before any work when the sets differ.
pub fn plan_video(frames_dir: &Path, landmarks_dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let frames = list_frames(frames_dir)?;
    if frames.is_empty() {
        return Err(Error::Data(format!("no frames in {}", frames_dir.display())));
    }
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(landmarks_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    sidecars.sort();
    if sidecars.len() != frames.len() {
        return Err(Error::Data(format!(
            "{} frames but {} landmark files",
            frames.len(),
            sidecars.len()
        )));
    }
    frames
        .into_iter()
        .map(|f| {
            let lm = sidecar_path(&f, landmarks_dir);
            if lm.is_file() {
                Ok((f, lm))
            } else {
                Err(Error::Data(format!(
                    "frame {} has no landmark file {}",
                    f.display(),
                    lm.display()
                )))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub iterations: usize,
    pub warmup: usize,
    pub median_s: f64,
    pub p95_s: f64,
    pub mean_s: f64,
    pub hardware: String,
}

/// Times single-frame generator forwards on fixed random inputs.
pub fn bench(generator: &Generator, n_iters: usize, warmup: usize) -> Result<BenchStats> {
    if n_iters == 0 {
        return Err(Error::Config("bench needs at least one iteration".into()));
    }
    let p = generator.params();
    let (dtype, device) = (p.dtype(), p.device().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut input = || -> Result<Tensor> {
        let n = 3 * CROP_SIZE * CROP_SIZE;
        let v: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
        Ok(Tensor::from_vec(v, (1, 3, CROP_SIZE, CROP_SIZE), &device)?.to_dtype(dtype)?)
    };
    let (masked, contour, reference) = (input()?, input()?, input()?);
    let run = || -> Result<f64> {
        let start = Instant::now();
        let out = generator.forward(&masked, &contour, &reference)?;
        // Force evaluation of the whole output.
        out.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..warmup {
        run()?;
    }
    let mut times = (0..n_iters).map(|_| run()).collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    Ok(BenchStats {
        iterations: n_iters,
        warmup,
        median_s: percentile(&times, 0.5),
        p95_s: percentile(&times, 0.95),
        mean_s: times.iter().sum::<f64>() / n_iters as f64,
        hardware: hardware_description(),
    })
}

/// Linear interpolation between closest ranks of sorted `xs`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn hardware_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{cpu}; {threads} thread(s); {}-{}; candle cpu f32",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

/// Scores every frame of `dir` in lexicographic order. With `landmarks_dir`, only the
/// aligned mouth crop is scored and frames without landmarks are skipped.
pub fn evaluate_dir(dir: &Path, landmarks_dir: Option<&Path>) -> Result<Vec<MetricReport>> {
    let frames = list_frames(dir)?;
    if frames.is_empty() {
        return Err(Error::Data(format!("no frames in {}", dir.display())));
    }
    let mut reports = Vec::with_capacity(frames.len());
    for f in frames {
        let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let image = ImageF32::load(&f)?;
        let scored = match landmarks_dir {
            None => image,
            Some(ld) => {
                let lm_path = sidecar_path(&f, ld);
                let lm = if lm_path.is_file() { LandmarkSet::load(&lm_path)? } else { None };
                let Some(lm) = lm else {
                    warn!(frame = %name, "no landmarks; not scored");
                    continue;
                };
                let t = compute_crop_box(&lm, CropMargin::default(), (image.width(), image.height()))?;
                crop_frame(&image, &t)
            }
        };
        reports.push(score_image(&name, &scored, None)?);
    }
    if reports.is_empty() {
        return Err(Error::Data(format!("no frame in {} has landmarks", dir.display())));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::training::synth::synthesize_video;

    fn session(policy: ReferencePolicy) -> RestoreSession {
        let cfg = ModelConfig {
            base_channels: 8,
            ..Default::default()
        };
        RestoreSession::new(Generator::new(&cfg, 1, DType::F32, &Device::Cpu).unwrap(), policy)
    }

    fn video(n: usize) -> Vec<crate::training::SyntheticFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        synthesize_video(n, 128, 128, &mut rng).unwrap()
    }

    #[test]
    fn policy_parsing() {
        for p in [ReferencePolicy::PreviousOutput, ReferencePolicy::SelfFrame, ReferencePolicy::FixedFrame] {
            assert_eq!(p.to_string().parse::<ReferencePolicy>().unwrap(), p);
        }
        assert!("latest".parse::<ReferencePolicy>().is_err());
        assert_eq!(ReferencePolicy::default(), ReferencePolicy::PreviousOutput);
    }

    #[test]
    fn first_frame_under_previous_output_uses_self() {
        let v = video(1);
        let mut a = session(ReferencePolicy::PreviousOutput);
        let mut b = session(ReferencePolicy::SelfFrame);
        assert!(a.previous_output().is_none());
        let ra = a.restore_frame(&v[0].image, Some(&v[0].landmarks)).unwrap();
        let rb = b.restore_frame(&v[0].image, Some(&v[0].landmarks)).unwrap();
        assert_eq!(ra.crop, rb.crop);
        assert!(a.previous_output().is_some());
        assert!(b.previous_output().is_none());
    }

    #[test]
    fn repeated_frames_restore_identically() {
        let v = video(2);
        let mut s = session(ReferencePolicy::PreviousOutput);
        let crops: Vec<_> = (0..4)
            .map(|_| s.restore_frame(&v[0].image, Some(&v[0].landmarks)).unwrap().crop.unwrap())
            .collect();
        assert!(crops.iter().all(|c| *c == crops[0]));

        // a new frame takes the previous output as its reference again
        let prev = s.previous_output().unwrap().clone();
        let next = s.restore_frame(&v[1].image, Some(&v[1].landmarks)).unwrap().crop.unwrap();
        let mut fresh = session(ReferencePolicy::FixedFrame);
        let t = compute_crop_box(&v[1].landmarks, CropMargin::default(), (128, 128)).unwrap();
        fresh.set_fixed_reference(crop_frame(&prev, &t), None).unwrap();
        let want = fresh.restore_frame(&v[1].image, Some(&v[1].landmarks)).unwrap().crop.unwrap();
        assert_eq!(next, want);
    }

    #[test]
    fn outside_box_is_untouched() {
        let v = video(1);
        let mut s = session(ReferencePolicy::SelfFrame);
        let out = s.restore_frame(&v[0].image, Some(&v[0].landmarks)).unwrap().image;
        let t = compute_crop_box(&v[0].landmarks, CropMargin::default(), (128, 128)).unwrap();
        let src = v[0].image.quantized();
        for y in 0..128u32 {
            for x in 0..128u32 {
                if !t.contains_pixel(x, y) {
                    for c in 0..3 {
                        assert_eq!(out.get(c, x as usize, y as usize), src.get(c, x as usize, y as usize));
                    }
                }
            }
        }
    }

    #[test]
    fn missing_landmarks_pass_through() {
        let v = video(1);
        let mut s = session(ReferencePolicy::PreviousOutput);
        let r = s.restore_frame(&v[0].image, None).unwrap();
        assert_eq!(r.image, v[0].image);
        assert!(r.crop.is_none());
        assert!(s.previous_output().is_none());
    }

    #[test]
    fn fixed_frame_requires_reference() {
        let v = video(1);
        let mut s = session(ReferencePolicy::FixedFrame);
        assert!(matches!(
            s.restore_frame(&v[0].image, Some(&v[0].landmarks)),
            Err(Error::Config(_))
        ));
        let mut s = session(ReferencePolicy::FixedFrame)
            .with_fixed_reference(ImageF32::filled(96, 96, [0.5; 3]), None)
            .unwrap();
        assert!(s.restore_frame(&v[0].image, Some(&v[0].landmarks)).is_ok());
        assert!(session(ReferencePolicy::FixedFrame)
            .with_fixed_reference(ImageF32::zeros(50, 50), None)
            .is_err());
    }

    #[test]
    fn video_count_mismatch_fails_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let (fd, ld, od) = (dir.path().join("f"), dir.path().join("l"), dir.path().join("o"));
        std::fs::create_dir_all(&fd).unwrap();
        std::fs::create_dir_all(&ld).unwrap();
        for (i, f) in video(3).iter().enumerate() {
            f.image.save(&fd.join(format!("{i:04}.png"))).unwrap();
            if i < 2 {
                std::fs::write(ld.join(format!("{i:04}.txt")), f.landmarks.to_text()).unwrap();
            }
        }
        let mut s = session(ReferencePolicy::PreviousOutput);
        assert!(matches!(s.restore_video(&fd, &ld, &od), Err(Error::Data(_))));
        assert!(!od.exists());
        let empty = dir.path().join("empty");
        std::fs::create_dir_all(&empty).unwrap();
        assert!(s.restore_video(&empty, &ld, &od).is_err());
    }

    #[test]
    fn video_outputs_mirror_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let (fd, ld, od) = (dir.path().join("f"), dir.path().join("l"), dir.path().join("o"));
        std::fs::create_dir_all(&fd).unwrap();
        std::fs::create_dir_all(&ld).unwrap();
        for (i, f) in video(3).iter().enumerate() {
            f.image.save(&fd.join(format!("{i:04}.png"))).unwrap();
            let text = if i == 1 { String::new() } else { f.landmarks.to_text() };
            std::fs::write(ld.join(format!("{i:04}.txt")), text).unwrap();
        }
        let mut s = session(ReferencePolicy::PreviousOutput);
        let reports = s.restore_video(&fd, &ld, &od).unwrap();
        let names: Vec<_> = reports.iter().map(|r| r.frame.clone()).collect();
        assert_eq!(names, ["0000.png", "0001.png", "0002.png"]);
        assert!(reports[0].latency_s.is_some() && reports[1].latency_s.is_none());
        assert_eq!(
            std::fs::read(fd.join("0001.png")).unwrap(),
            std::fs::read(od.join("0001.png")).unwrap()
        );
    }

    #[test]
    fn bench_rejects_zero_iterations() {
        let s = session(ReferencePolicy::SelfFrame);
        assert!(bench(s.generator(), 0, 1).is_err());
        let stats = bench(s.generator(), 3, 1).unwrap();
        assert!(stats.median_s > 0.0 && stats.p95_s >= stats.median_s);
        assert!(!stats.hardware.is_empty());
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 0.5), 3.0);
        assert_eq!(percentile(&xs, 0.95), 4.8);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }
}
