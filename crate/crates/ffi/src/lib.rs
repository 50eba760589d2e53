//! C ABI over `hdtr-core`.
//!
//! Conventions:
//! - every fallible function returns an [`HdtrStatus`]; `HDTR_STATUS_OK` is zero;
//! - on failure, [`hdtr_last_error_message`] describes the most recent error on the
//!   calling thread;
//! - images cross the boundary as interleaved 8-bit RGB, row-major, `width * height * 3`
//!   bytes;
//! - landmarks are 136 doubles: `x0, y0, x1, y1, ...` in iBUG 68-point order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use candle_core::{DType, Device};
use hdtr_core::geometry::{compute_crop_box, CropMargin, NUM_LANDMARKS};
use hdtr_core::metrics::{GrayImage, SharpnessScores};
use hdtr_core::{Error, Generator, ImageF32, LandmarkSet, ModelConfig, ReferencePolicy, RestoreSession};

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdtrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Geometry = 3,
    Config = 4,
    Shape = 5,
    Landmarks = 6,
    Data = 7,
    Checkpoint = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdtrReferencePolicy {
    PreviousOutput = 0,
    SelfFrame = 1,
    FixedFrame = 2,
}

/// The eight sharpness scores of one image.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HdtrSharpness {
    pub brenner: f64,
    pub laplacian: f64,
    pub smd: f64,
    pub smd2: f64,
    pub variance: f64,
    pub energy: f64,
    pub vollath: f64,
    pub entropy: f64,
}

/// Half-open mouth box in source pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HdtrCropBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

/// Opaque restoration session.
pub struct HdtrSession {
    inner: RestoreSession,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> HdtrStatus {
    match err {
        Error::Geometry(_) => HdtrStatus::Geometry,
        Error::Config(_) => HdtrStatus::Config,
        Error::Shape(_) => HdtrStatus::Shape,
        Error::Landmarks(_) => HdtrStatus::Landmarks,
        Error::Data(_) | Error::NonFiniteLoss { .. } => HdtrStatus::Data,
        Error::CheckpointVersion { .. } | Error::CheckpointCorrupt { .. } => HdtrStatus::Checkpoint,
        Error::Io(_) | Error::Image(_) => HdtrStatus::Io,
        Error::Tensor(_) => HdtrStatus::Internal,
    }
}

struct Fail(HdtrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.kind()))
    }
}

fn null(what: &str) -> Fail {
    Fail(HdtrStatus::NullArgument, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(HdtrStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic for [`hdtr_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HdtrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            HdtrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            HdtrStatus::Panic
        }
    }
}

fn policy_of(p: HdtrReferencePolicy) -> ReferencePolicy {
    match p {
        HdtrReferencePolicy::PreviousOutput => ReferencePolicy::PreviousOutput,
        HdtrReferencePolicy::SelfFrame => ReferencePolicy::SelfFrame,
        HdtrReferencePolicy::FixedFrame => ReferencePolicy::FixedFrame,
    }
}

/// # Safety
/// `rgb` must be null or point to `width * height * 3` readable bytes.
unsafe fn read_rgb(rgb: *const u8, width: u32, height: u32) -> Result<ImageF32, Fail> {
    if rgb.is_null() {
        return Err(null("rgb"));
    }
    if width == 0 || height == 0 {
        return Err(invalid(format!("empty image {width}x{height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let bytes = std::slice::from_raw_parts(rgb, w * h * 3);
    let mut planar = vec![0f32; w * h * 3];
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(ImageF32::from_planar(w, h, planar)?)
}

/// # Safety
/// `points` must be null or point to `2 * 68` readable doubles.
unsafe fn read_landmarks(points: *const f64) -> Result<Option<LandmarkSet>, Fail> {
    if points.is_null() {
        return Ok(None);
    }
    let raw = std::slice::from_raw_parts(points, 2 * NUM_LANDMARKS);
    Ok(Some(LandmarkSet::new(raw.chunks_exact(2).map(|p| [p[0], p[1]]).collect())?))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hdtr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hdtr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens a session from a checkpoint file.
///
/// # Safety
/// `checkpoint_path` must be a NUL-terminated string; `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hdtr_session_open(
    checkpoint_path: *const c_char,
    policy: HdtrReferencePolicy,
    out: *mut *mut HdtrSession,
) -> HdtrStatus {
    guard(|| {
        if checkpoint_path.is_null() {
            return Err(null("checkpoint_path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(checkpoint_path)
            .to_str()
            .map_err(|_| invalid("checkpoint_path is not UTF-8"))?;
        let inner = RestoreSession::from_checkpoint(Path::new(path), policy_of(policy))?;
        *out = Box::into_raw(Box::new(HdtrSession { inner }));
        Ok(())
    })
}

/// Opens a session around a freshly initialized generator. Intended for tests and
/// latency measurements.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hdtr_session_open_untrained(
    base_channels: u32,
    seed: u64,
    policy: HdtrReferencePolicy,
    out: *mut *mut HdtrSession,
) -> HdtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig {
            base_channels: base_channels as usize,
            ..Default::default()
        };
        let g = Generator::new(&cfg, seed, DType::F32, &Device::Cpu)?;
        *out = Box::into_raw(Box::new(HdtrSession {
            inner: RestoreSession::new(g, policy_of(policy)),
        }));
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `session` must be null or a pointer returned by an open function, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hdtr_session_free(session: *mut HdtrSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Forgets the previous output, as at the start of a new video.
///
/// # Safety
/// `session` must be a live session pointer.
#[no_mangle]
pub unsafe extern "C" fn hdtr_session_reset(session: *mut HdtrSession) -> HdtrStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        s.inner.reset();
        Ok(())
    })
}

/// Sets the reference still for the fixed-frame policy: a 96×96 crop, or a full frame
/// with its landmarks.
///
/// # Safety
/// `session` must be a live session pointer; `rgb` must hold `width * height * 3` bytes;
/// `landmarks` must be null or hold 136 doubles.
#[no_mangle]
pub unsafe extern "C" fn hdtr_session_set_fixed_reference(
    session: *mut HdtrSession,
    rgb: *const u8,
    width: u32,
    height: u32,
    landmarks: *const f64,
) -> HdtrStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let img = read_rgb(rgb, width, height)?;
        let lm = read_landmarks(landmarks)?;
        s.inner.set_fixed_reference(img, lm.as_ref())?;
        Ok(())
    })
}

/// Restores one frame into `out_rgb` (same size as the input). With `landmarks` null the
/// frame is copied through unchanged. `out_latency_s`, when not null, receives the
/// generator forward time (0 for pass-through frames).
///
/// # Safety
/// `session` must be a live session pointer; `rgb` and `out_rgb` must each hold
/// `width * height * 3` bytes; `landmarks` must be null or hold 136 doubles;
/// `out_latency_s` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn hdtr_session_restore_frame(
    session: *mut HdtrSession,
    rgb: *const u8,
    width: u32,
    height: u32,
    landmarks: *const f64,
    out_rgb: *mut u8,
    out_latency_s: *mut f64,
) -> HdtrStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        if out_rgb.is_null() {
            return Err(null("out_rgb"));
        }
        let frame = read_rgb(rgb, width, height)?;
        let lm = read_landmarks(landmarks)?;
        let restored = s.inner.restore_frame(&frame, lm.as_ref())?;
        let n = width as usize * height as usize * 3;
        let out = std::slice::from_raw_parts_mut(out_rgb, n);
        if lm.is_none() {
            std::ptr::copy(rgb, out.as_mut_ptr(), n);
        } else {
            out.copy_from_slice(&restored.image.to_rgb8().into_raw());
        }
        if !out_latency_s.is_null() {
            *out_latency_s = restored.latency_s.unwrap_or(0.0);
        }
        Ok(())
    })
}

/// Mouth crop box for a frame of the given size, with the default margin.
///
/// # Safety
/// `landmarks` must hold 136 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdtr_crop_box(
    landmarks: *const f64,
    width: u32,
    height: u32,
    out: *mut HdtrCropBox,
) -> HdtrStatus {
    guard(|| {
        if landmarks.is_null() {
            return Err(null("landmarks"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let lm = read_landmarks(landmarks)?.expect("checked non-null");
        let t = compute_crop_box(&lm, CropMargin::default(), (width as usize, height as usize))?;
        *out = HdtrCropBox {
            left: t.left,
            top: t.top,
            right: t.right,
            bottom: t.bottom,
        };
        Ok(())
    })
}

/// Scores an RGB image with the eight sharpness metrics (luminance on a 0–255 scale).
///
/// # Safety
/// `rgb` must hold `width * height * 3` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdtr_sharpness(
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut HdtrSharpness,
) -> HdtrStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let img = read_rgb(rgb, width, height)?;
        let s = SharpnessScores::compute(&GrayImage::from_rgb(&img)?)?;
        *out = HdtrSharpness {
            brenner: s.brenner,
            laplacian: s.laplacian,
            smd: s.smd,
            smd2: s.smd2,
            variance: s.variance,
            energy: s.energy,
            vollath: s.vollath,
            entropy: s.entropy,
        };
        Ok(())
    })
}
