use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use tracing::warn;

use super::synth::SyntheticFrame;
use crate::error::{Error, Result};
use crate::geometry::{compute_crop_box, prepare_mouth, CropMargin, LandmarkSet, MouthInputs};
use crate::image::{stack_images, ImageF32};

/// Model inputs for one frame.
#[derive(Debug, Clone)]
pub struct MouthTriplet {
    pub masked: ImageF32,
    pub contour: ImageF32,
    pub reference: ImageF32,
    pub transform: crate::geometry::CropTransform,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub triplet: MouthTriplet,
    /// Ground-truth aligned crop.
    pub target: ImageF32,
    pub index: usize,
    pub reference_index: usize,
}

#[derive(Debug, Clone)]
struct StoredFrame {
    name: String,
    video: usize,
    mouth: Option<MouthInputs>,
}

/// Frames reduced to their aligned mouth inputs, grouped by video.
#[derive(Debug, Clone)]
pub struct FrameStore {
    frames: Vec<StoredFrame>,
}

impl FrameStore {
    /// `entries` are `(name, video id, frame, landmarks)`. Frames without landmarks are kept
    /// so indices stay stable, but never produce samples.
    pub fn new(
        entries: impl IntoIterator<Item = (String, usize, ImageF32, Option<LandmarkSet>)>,
        margin: CropMargin,
    ) -> Result<Self> {
        let mut frames = Vec::new();
        for (name, video, image, landmarks) in entries {
            let mouth = match landmarks {
                Some(lm) => {
                    let t = compute_crop_box(&lm, margin, (image.width(), image.height()))?;
                    Some(prepare_mouth(&image, &lm, &t)?)
                }
                None => None,
            };
            frames.push(StoredFrame { name, video, mouth });
        }
        Ok(Self { frames })
    }

    pub fn from_synthetic(frames: Vec<SyntheticFrame>) -> Result<Self> {
        Self::new(
            frames
                .into_iter()
                .enumerate()
                .map(|(i, f)| (format!("synthetic_{i:05}"), 0, f.image, Some(f.landmarks))),
            CropMargin::default(),
        )
    }

    /// Reads a flat directory (one video) or a directory of per-video subdirectories.
    /// Landmark sidecars share the frame's stem with a `.txt` extension.
    pub fn load_dirs(frames_dir: &Path, landmarks_dir: &Path) -> Result<Self> {
        let subdirs = sorted_entries(frames_dir, |p| p.is_dir())?;
        let videos: Vec<(PathBuf, PathBuf)> = if subdirs.is_empty() {
            vec![(frames_dir.to_path_buf(), landmarks_dir.to_path_buf())]
        } else {
            subdirs
                .into_iter()
                .map(|d| {
                    let lm = landmarks_dir.join(d.file_name().unwrap_or_default());
                    (d, lm)
                })
                .collect()
        };
        let mut entries = Vec::new();
        for (video, (fdir, ldir)) in videos.iter().enumerate() {
            for path in list_frames(fdir)? {
                let lm_path = sidecar_path(&path, ldir);
                let landmarks = if lm_path.exists() {
                    LandmarkSet::load(&lm_path)?
                } else {
                    None
                };
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                entries.push((name, video, ImageF32::load(&path)?, landmarks));
            }
        }
        Self::new(entries, CropMargin::default())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.frames[index].name
    }

    pub fn mouth(&self, index: usize) -> Option<&MouthInputs> {
        self.frames.get(index).and_then(|f| f.mouth.as_ref())
    }

    /// Indices of frames that carry landmarks.
    pub fn usable(&self) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| self.frames[i].mouth.is_some())
            .collect()
    }

    /// Candidate reference frames for `index`: other usable frames of the same video, or
    /// of any video when its own has no other usable frame.
    fn reference_pool(&self, index: usize) -> Vec<usize> {
        let video = self.frames[index].video;
        let others = |same_video: bool| {
            self.usable()
                .into_iter()
                .filter(|&j| j != index && (!same_video || self.frames[j].video == video))
                .collect::<Vec<_>>()
        };
        let pool = others(true);
        if pool.is_empty() {
            others(false)
        } else {
            pool
        }
    }
}

/// Target and inputs from frame `index`; reference drawn uniformly from other frames.
///
/// Returns `Ok(None)`, with a warning, when the frame has no landmarks.
pub fn build_sample<R: Rng>(store: &FrameStore, index: usize, rng: &mut R) -> Result<Option<Sample>> {
    if index >= store.len() {
        return Err(Error::Data(format!("frame index {index} out of range ({})", store.len())));
    }
    let Some(mouth) = store.mouth(index) else {
        warn!(frame = store.name(index), "no landmarks; sample skipped");
        return Ok(None);
    };
    let pool = store.reference_pool(index);
    if pool.is_empty() {
        return Err(Error::Data(
            "need at least two frames with landmarks to draw a reference".into(),
        ));
    }
    let reference_index = pool[rng.random_range(0..pool.len())];
    let reference = store
        .mouth(reference_index)
        .map(|m| m.aligned.clone())
        .expect("reference pool holds usable frames");
    Ok(Some(Sample {
        triplet: MouthTriplet {
            masked: mouth.masked.clone(),
            contour: mouth.contour.clone(),
            reference,
            transform: mouth.transform,
        },
        target: mouth.aligned.clone(),
        index,
        reference_index,
    }))
}

/// `(N, 3, 96, 96)` tensors for a batch of samples.
pub struct BatchTensors {
    pub masked: Tensor,
    pub contour: Tensor,
    pub reference: Tensor,
    pub target: Tensor,
}

impl BatchTensors {
    pub fn new(batch: &[Sample], dtype: DType, device: &Device) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let stack = |f: fn(&Sample) -> &ImageF32| {
            let imgs: Vec<&ImageF32> = batch.iter().map(f).collect();
            stack_images(&imgs, dtype, device)
        };
        Ok(Self {
            masked: stack(|s| &s.triplet.masked)?,
            contour: stack(|s| &s.triplet.contour)?,
            reference: stack(|s| &s.triplet.reference)?,
            target: stack(|s| &s.target)?,
        })
    }
}

pub(crate) const FRAME_EXTENSIONS: [&str; 2] = ["png", "bmp"];

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| keep(p))
        .collect();
    out.sort();
    Ok(out)
}

/// Lossless frames in lexicographic order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    sorted_entries(dir, |p| {
        p.is_file()
            && p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
    })
}

pub fn sidecar_path(frame: &Path, landmarks_dir: &Path) -> PathBuf {
    let stem = frame.file_stem().unwrap_or_default();
    landmarks_dir.join(stem).with_extension("txt")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::training::synth::synthesize_faces;

    fn store(n: usize, seed: u64) -> FrameStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FrameStore::from_synthetic(synthesize_faces(n, 96, 96, &mut rng).unwrap()).unwrap()
    }

    #[test]
    fn two_frames_reference_is_the_other() {
        let s = store(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = build_sample(&s, 0, &mut rng).unwrap().unwrap();
        assert_eq!(sample.reference_index, 1);
        assert_eq!(sample.triplet.reference, s.mouth(1).unwrap().aligned);
        assert_eq!(sample.target, s.mouth(0).unwrap().aligned);
    }

    #[test]
    fn reference_never_equals_target() {
        let s = store(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..1000 {
            let i = k % 5;
            let sample = build_sample(&s, i, &mut rng).unwrap().unwrap();
            assert_ne!(sample.reference_index, i);
        }
    }

    #[test]
    fn fixed_seed_same_sequence() {
        let s = store(4, 5);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|k| build_sample(&s, k % 4, &mut rng).unwrap().unwrap().reference_index)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
    }

    #[test]
    fn missing_landmarks_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = synthesize_faces(3, 96, 96, &mut rng).unwrap();
        let entries = frames.into_iter().enumerate().map(|(i, f)| {
            let lm = (i != 1).then_some(f.landmarks);
            (format!("f{i}"), 0, f.image, lm)
        });
        let s = FrameStore::new(entries, CropMargin::default()).unwrap();
        assert!(build_sample(&s, 1, &mut rng).unwrap().is_none());
        assert_eq!(s.usable(), vec![0, 2]);
        assert_eq!(build_sample(&s, 0, &mut rng).unwrap().unwrap().reference_index, 2);
    }

    #[test]
    fn single_usable_frame_errors() {
        let s = store(1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(build_sample(&s, 0, &mut rng), Err(Error::Data(_))));
    }

    #[test]
    fn reference_prefers_same_video() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = synthesize_faces(4, 96, 96, &mut rng).unwrap();
        let entries = frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| (format!("f{i}"), i / 2, f.image, Some(f.landmarks)));
        let s = FrameStore::new(entries, CropMargin::default()).unwrap();
        for _ in 0..50 {
            assert_eq!(build_sample(&s, 2, &mut rng).unwrap().unwrap().reference_index, 3);
        }
    }

    #[test]
    fn directory_loader() {
        let dir = tempfile::tempdir().unwrap();
        let (fd, ld) = (dir.path().join("frames"), dir.path().join("lm"));
        std::fs::create_dir_all(&fd).unwrap();
        std::fs::create_dir_all(&ld).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (i, f) in synthesize_faces(3, 96, 96, &mut rng).unwrap().iter().enumerate() {
            f.image.save(&fd.join(format!("{i:03}.png"))).unwrap();
            if i != 2 {
                std::fs::write(ld.join(format!("{i:03}.txt")), f.landmarks.to_text()).unwrap();
            }
        }
        std::fs::write(fd.join("notes.md"), "ignored").unwrap();
        let s = FrameStore::load_dirs(&fd, &ld).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.usable(), vec![0, 1]);
        assert_eq!(s.name(2), "002.png");
    }
}
