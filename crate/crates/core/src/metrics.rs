//! No-reference sharpness metrics.
//!
//! Conventions: intensities are on the `[0, 255]` scale; `x` is the column index. Every
//! difference term is summed over the pixels where that term is defined. All metrics are
//! sums except `laplacian`, which is a mean over the interior. Each report records the
//! image size so sums can be normalized afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageF32;

/// Single-channel image, row-major, values on the `[0, 255]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!(
                "gray image {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("gray image holds non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`, rescaled from `[0, 1]` to `[0, 255]`.
    pub fn from_rgb(img: &ImageF32) -> Result<Self> {
        let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 255.0 * (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64))
            .collect();
        Self::new(img.width(), img.height(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.width)
    }

    pub fn transposed(&self) -> Self {
        Self {
            width: self.height,
            height: self.width,
            data: (0..self.width)
                .flat_map(|x| (0..self.height).map(move |y| self.get(x, y)))
                .collect(),
        }
    }

    fn require(&self, metric: &str, min_w: usize, min_h: usize) -> Result<()> {
        if self.width < min_w || self.height < min_h {
            return Err(Error::Shape(format!(
                "{metric} needs at least {min_w}x{min_h} pixels, image is {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// `Σ (I(x+2, y) − I(x, y))²`.
pub fn brenner(img: &GrayImage) -> Result<f64> {
    img.require("brenner", 3, 1)?;
    Ok(img
        .rows()
        .map(|r| r.iter().zip(&r[2..]).map(|(a, b)| (b - a).powi(2)).sum::<f64>())
        .sum())
}

/// Mean over the interior of the squared 4-neighbour Laplacian response.
pub fn laplacian(img: &GrayImage) -> Result<f64> {
    img.require("laplacian", 3, 3)?;
    let mut acc = 0.0;
    for y in 1..img.height - 1 {
        let (up, mid, down) = (img.row(y - 1), img.row(y), img.row(y + 1));
        for x in 1..img.width - 1 {
            let r = up[x] + down[x] + mid[x - 1] + mid[x + 1] - 4.0 * mid[x];
            acc += r * r;
        }
    }
    Ok(acc / ((img.width - 2) * (img.height - 2)) as f64)
}

fn abs_diff_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()
}

fn sq_diff_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

/// `Σ |I(x,y) − I(x,y−1)| + Σ |I(x,y) − I(x+1,y)|`.
pub fn smd(img: &GrayImage) -> Result<f64> {
    img.require("smd", 2, 2)?;
    let vertical: f64 = img
        .rows()
        .zip(img.rows().skip(1))
        .map(|(prev, cur)| abs_diff_sum(cur, prev))
        .sum();
    let horizontal: f64 = img.rows().map(|r| abs_diff_sum(r, &r[1..])).sum();
    Ok(vertical + horizontal)
}

/// `Σ |I(x,y) − I(x+1,y)| · |I(x,y) − I(x,y+1)|`.
pub fn smd2(img: &GrayImage) -> Result<f64> {
    img.require("smd2", 2, 2)?;
    Ok(img
        .rows()
        .zip(img.rows().skip(1))
        .map(|(cur, next)| {
            (0..img.width - 1)
                .map(|x| (cur[x] - cur[x + 1]).abs() * (cur[x] - next[x]).abs())
                .sum::<f64>()
        })
        .sum())
}

/// `Σ (I − μ)²` with `μ` the global mean.
pub fn variance(img: &GrayImage) -> Result<f64> {
    let mean = img.data.iter().sum::<f64>() / img.data.len() as f64;
    Ok(img.data.iter().map(|v| (v - mean).powi(2)).sum())
}

/// `Σ (I(x+1,y) − I(x,y))² + Σ (I(x,y+1) − I(x,y))²`.
pub fn energy(img: &GrayImage) -> Result<f64> {
    img.require("energy", 2, 2)?;
    let horizontal: f64 = img.rows().map(|r| sq_diff_sum(&r[1..], r)).sum();
    let vertical: f64 = img
        .rows()
        .zip(img.rows().skip(1))
        .map(|(cur, next)| sq_diff_sum(next, cur))
        .sum();
    Ok(horizontal + vertical)
}

/// Vollath F4: `Σ I(x,y)·I(x+1,y) − Σ I(x,y)·I(x+2,y)`.
pub fn vollath(img: &GrayImage) -> Result<f64> {
    img.require("vollath", 3, 1)?;
    Ok(img
        .rows()
        .map(|r| {
            let lag1: f64 = r.iter().zip(&r[1..]).map(|(a, b)| a * b).sum();
            let lag2: f64 = r.iter().zip(&r[2..]).map(|(a, b)| a * b).sum();
            lag1 - lag2
        })
        .sum())
}

/// Shannon entropy (bits) of the 256-bin histogram of rounded intensities.
pub fn entropy(img: &GrayImage) -> Result<f64> {
    let mut hist = [0usize; 256];
    for &v in &img.data {
        hist[v.round().clamp(0.0, 255.0) as usize] += 1;
    }
    let n = img.data.len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

/// The eight metric values for one image, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SharpnessScores {
    pub brenner: f64,
    pub laplacian: f64,
    pub smd: f64,
    pub smd2: f64,
    pub variance: f64,
    pub energy: f64,
    pub vollath: f64,
    pub entropy: f64,
}

impl SharpnessScores {
    pub const NAMES: [&'static str; 8] = [
        "brenner", "laplacian", "smd", "smd2", "variance", "energy", "vollath", "entropy",
    ];

    pub fn compute(img: &GrayImage) -> Result<Self> {
        Ok(Self {
            brenner: brenner(img)?,
            laplacian: laplacian(img)?,
            smd: smd(img)?,
            smd2: smd2(img)?,
            variance: variance(img)?,
            energy: energy(img)?,
            vollath: vollath(img)?,
            entropy: entropy(img)?,
        })
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.brenner,
            self.laplacian,
            self.smd,
            self.smd2,
            self.variance,
            self.energy,
            self.vollath,
            self.entropy,
        ]
    }

    fn from_values(v: [f64; 8]) -> Self {
        Self {
            brenner: v[0],
            laplacian: v[1],
            smd: v[2],
            smd2: v[3],
            variance: v[4],
            energy: v[5],
            vollath: v[6],
            entropy: v[7],
        }
    }
}

/// One line of the report stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame: String,
    pub width: usize,
    pub height: usize,
    #[serde(flatten)]
    pub scores: SharpnessScores,
    /// Generator forward time in seconds, when the frame was produced by the model.
    pub latency_s: Option<f64>,
}

/// Dataset-level means, emitted after the per-frame records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub frames: usize,
    #[serde(flatten)]
    pub scores: SharpnessScores,
    pub latency_s: Option<f64>,
}

pub fn score_image(name: &str, img: &ImageF32, latency_s: Option<f64>) -> Result<MetricReport> {
    let gray = GrayImage::from_rgb(img)?;
    Ok(MetricReport {
        frame: name.to_string(),
        width: gray.width(),
        height: gray.height(),
        scores: SharpnessScores::compute(&gray)?,
        latency_s,
    })
}

/// Scores each frame in order and averages. Latency is averaged only when every frame has one.
pub fn score_frames<'a>(
    frames: impl IntoIterator<Item = (&'a str, &'a ImageF32)>,
    latencies: Option<&[f64]>,
) -> Result<(Vec<MetricReport>, AggregateReport)> {
    let mut reports = Vec::new();
    for (i, (name, img)) in frames.into_iter().enumerate() {
        let latency = match latencies {
            Some(l) => Some(*l.get(i).ok_or_else(|| {
                Error::Data(format!("no latency supplied for frame {i}"))
            })?),
            None => None,
        };
        reports.push(score_image(name, img, latency)?);
    }
    if let Some(l) = latencies {
        if l.len() != reports.len() {
            return Err(Error::Data(format!(
                "{} latencies for {} frames",
                l.len(),
                reports.len()
            )));
        }
    }
    let aggregate = aggregate(&reports)?;
    Ok((reports, aggregate))
}

pub fn aggregate(reports: &[MetricReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Data("no frames to score".into()));
    }
    let n = reports.len() as f64;
    let mut sums = [0.0; 8];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(r.scores.values()) {
            *s += v;
        }
    }
    let latency_s = reports
        .iter()
        .map(|r| r.latency_s)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    Ok(AggregateReport {
        frames: reports.len(),
        scores: SharpnessScores::from_values(sums.map(|s| s / n)),
        latency_s,
    })
}

/// Aligned text table: one row per labelled aggregate, one column per metric.
pub fn render_table(rows: &[(&str, &AggregateReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<label_w$}", "method");
    for name in SharpnessScores::NAMES {
        out.push_str(&format!(" {name:>14}"));
    }
    out.push_str(&format!(" {:>12}\n", "time_s"));
    for (label, agg) in rows {
        out.push_str(&format!("{label:<label_w$}"));
        for v in agg.scores.values() {
            out.push_str(&format!(" {v:>14.4}"));
        }
        match agg.latency_s {
            Some(t) => out.push_str(&format!(" {t:>12.6}\n")),
            None => out.push_str(&format!(" {:>12}\n", "-")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, c: f64) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| c).unwrap()
    }

    #[test]
    fn constant_images() {
        let img = constant(7, 5, 42.0);
        let s = SharpnessScores::compute(&img).unwrap();
        assert_eq!(s.brenner, 0.0);
        assert_eq!(s.laplacian, 0.0);
        assert_eq!(s.smd, 0.0);
        assert_eq!(s.smd2, 0.0);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.energy, 0.0);
        assert_eq!(s.entropy, 0.0);
        assert_eq!(s.vollath, 42.0 * 42.0 * 5.0);
    }

    #[test]
    fn brenner_step_row() {
        let img = GrayImage::from_fn(4, 3, |x, _| if x >= 2 { 255.0 } else { 0.0 }).unwrap();
        assert_eq!(brenner(&img).unwrap(), 3.0 * 2.0 * 255.0 * 255.0);
    }

    #[test]
    fn laplacian_single_bright_pixel() {
        let img = GrayImage::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { 255.0 } else { 0.0 }).unwrap();
        assert_eq!(laplacian(&img).unwrap(), 1_040_400.0);
    }

    #[test]
    fn smd_vertical_step() {
        let img = GrayImage::from_fn(4, 3, |x, _| if x >= 2 { 255.0 } else { 0.0 }).unwrap();
        assert_eq!(smd(&img).unwrap(), 3.0 * 255.0);
    }

    #[test]
    fn smd2_row_varying_is_zero() {
        let img = GrayImage::from_fn(6, 5, |x, _| (x * 37 % 11) as f64).unwrap();
        assert_eq!(smd2(&img).unwrap(), 0.0);
    }

    #[test]
    fn variance_two_pixels() {
        let img = GrayImage::new(2, 1, vec![0.0, 255.0]).unwrap();
        assert_eq!(variance(&img).unwrap(), 32512.5);
    }

    #[test]
    fn energy_two_by_two() {
        let img = GrayImage::new(2, 2, vec![0.0, 255.0, 0.0, 255.0]).unwrap();
        assert_eq!(energy(&img).unwrap(), 2.0 * 255.0 * 255.0);
    }

    #[test]
    fn entropy_cases() {
        let half = GrayImage::from_fn(8, 4, |x, _| if x < 4 { 0.0 } else { 255.0 }).unwrap();
        assert_eq!(entropy(&half).unwrap(), 1.0);
        let ramp = GrayImage::from_fn(16, 16, |x, y| (y * 16 + x) as f64).unwrap();
        assert_eq!(entropy(&ramp).unwrap(), 8.0);
    }

    #[test]
    fn too_small_images_error() {
        let img = constant(2, 2, 1.0);
        assert!(brenner(&img).is_err());
        assert!(laplacian(&img).is_err());
        assert!(vollath(&img).is_err());
        assert!(energy(&img).is_ok());
        let line = constant(5, 1, 1.0);
        assert!(smd(&line).is_err());
        assert!(brenner(&line).is_ok());
    }

    #[test]
    fn transpose_symmetry_and_directionality() {
        let img = GrayImage::from_fn(5, 4, |x, y| ((x * 13 + y * 7) % 9) as f64 * 20.0).unwrap();
        let t = img.transposed();
        assert_eq!(variance(&img).unwrap(), variance(&t).unwrap());
        assert_eq!(entropy(&img).unwrap(), entropy(&t).unwrap());
        // horizontal stripes: brenner sees nothing along rows, its transpose does
        let stripes = GrayImage::from_fn(8, 8, |_, y| if (y / 2) % 2 == 0 { 0.0 } else { 255.0 }).unwrap();
        assert_eq!(brenner(&stripes).unwrap(), 0.0);
        assert!(brenner(&stripes.transposed()).unwrap() > 0.0);
    }

    #[test]
    fn aggregation() {
        let a = ImageF32::filled(4, 4, [0.0; 3]);
        let mut b = ImageF32::filled(4, 4, [1.0; 3]);
        b.set(0, 0, 0, 0.0);
        let (reports, agg) = score_frames([("a", &a)], None).unwrap();
        assert_eq!(agg.scores, reports[0].scores);
        assert_eq!(agg.frames, 1);
        let (reports, agg) = score_frames([("a", &a), ("b", &b)], Some(&[0.1, 0.3])).unwrap();
        for (k, v) in agg.scores.values().iter().enumerate() {
            let mean = 0.5 * (reports[0].scores.values()[k] + reports[1].scores.values()[k]);
            assert!((v - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
        assert!((agg.latency_s.unwrap() - 0.2).abs() < 1e-12);
        assert!(score_frames(std::iter::empty(), None).is_err());
        assert!(score_frames([("a", &a)], Some(&[])).is_err());
    }

    #[test]
    fn report_line_key_order() {
        let a = ImageF32::filled(4, 4, [0.5; 3]);
        let r = score_image("f0.png", &a, Some(0.01)).unwrap();
        let line = serde_json::to_string(&r).unwrap();
        let keys = ["frame", "width", "height", "brenner", "laplacian", "smd", "smd2", "variance", "energy", "vollath", "entropy", "latency_s"];
        let mut last = 0;
        for k in keys {
            let pos = line.find(&format!("\"{k}\"")).unwrap();
            assert!(pos >= last, "{k} out of order in {line}");
            last = pos;
        }
        let table = render_table(&[("restored", &aggregate(&[r]).unwrap())]);
        assert!(table.lines().count() == 2 && table.contains("vollath"));
    }
}
