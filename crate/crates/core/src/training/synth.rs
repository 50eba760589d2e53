//! Procedural face-like frames with exact 68-point landmarks.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::Result;
use crate::geometry::{LandmarkSet, INNER_LIP, OUTER_LIP};
use crate::image::ImageF32;

/// Parameters of one synthetic face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyFace {
    pub center: [f64; 2],
    /// Face half-axes in pixels.
    pub half_axes: [f64; 2],
    /// Mouth opening in `[0, 1]`, relative to the mouth half-width.
    pub mouth_open: f64,
    pub mouth_width: f64,
    pub skin: [f32; 3],
    pub lip: [f32; 3],
    /// Horizontal phase of the tooth pattern, in tooth widths.
    pub teeth_phase: f64,
}

impl ToyFace {
    pub fn random<R: Rng>(rng: &mut R, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let scale = rng.random_range(0.9..1.05);
        Self {
            center: [
                w * 0.5 + rng.random_range(-0.04..0.04) * w,
                h * 0.47 + rng.random_range(-0.03..0.03) * h,
            ],
            half_axes: [0.36 * w * scale, 0.46 * h * scale],
            mouth_open: rng.random_range(0.15..0.9),
            mouth_width: rng.random_range(0.85..1.1),
            skin: [
                rng.random_range(0.72..0.9),
                rng.random_range(0.55..0.68),
                rng.random_range(0.45..0.55),
            ],
            lip: [
                rng.random_range(0.62..0.78),
                rng.random_range(0.25..0.35),
                rng.random_range(0.28..0.38),
            ],
            teeth_phase: rng.random_range(0.0..1.0),
        }
    }

    fn mouth_geometry(&self) -> ([f64; 2], f64, f64, f64) {
        let [cx, cy] = self.center;
        let [a, b] = self.half_axes;
        let centre = [cx, cy + 0.5 * b];
        let half_w = 0.36 * a * self.mouth_width;
        let gap = self.mouth_open * 0.45 * half_w;
        let lip_thickness = 0.16 * half_w;
        (centre, half_w, gap, lip_thickness)
    }

    /// iBUG-ordered landmarks.
    pub fn landmarks(&self) -> Result<LandmarkSet> {
        let [cx, cy] = self.center;
        let [a, b] = self.half_axes;
        let mut pts = vec![[0.0; 2]; 68];
        for (k, p) in pts[0..17].iter_mut().enumerate() {
            let phi = PI - k as f64 * PI / 16.0;
            *p = [cx + a * phi.cos(), cy + b * phi.sin()];
        }
        for (k, p) in pts[17..27].iter_mut().enumerate() {
            let side = if k < 5 { -1.0 } else { 1.0 };
            let t = (k % 5) as f64 / 4.0;
            let x = cx + side * a * (0.15 + 0.45 * if side < 0.0 { 1.0 - t } else { t });
            *p = [x, cy - 0.42 * b - 0.05 * b * (PI * t).sin()];
        }
        for (k, p) in pts[27..31].iter_mut().enumerate() {
            *p = [cx, cy - 0.3 * b + k as f64 * 0.13 * b];
        }
        for (k, p) in pts[31..36].iter_mut().enumerate() {
            let off = (k as f64 - 2.0) * 0.07 * a;
            *p = [cx + off, cy + 0.15 * b - 0.02 * b * (k as f64 - 2.0).abs()];
        }
        for (eye, base) in [(-1.0, 36), (1.0, 42)] {
            let ex = cx + eye * 0.38 * a;
            let ey = cy - 0.27 * b;
            for k in 0..6 {
                let phi = PI + k as f64 * PI / 3.0;
                pts[base + k] = [ex + 0.16 * a * phi.cos(), ey + 0.05 * b * phi.sin()];
            }
        }
        let ([mx, my], half_w, gap, thick) = self.mouth_geometry();
        let outer_v = 0.5 * gap + thick;
        let upper_u = [-2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0];
        let mut outer = vec![[mx - half_w, my]];
        outer.extend(upper_u.iter().map(|u| [mx + u * half_w, my - outer_v * (1.0 - u * u).sqrt()]));
        outer.push([mx + half_w, my]);
        outer.extend(upper_u.iter().rev().map(|u| [mx + u * half_w, my + outer_v * (1.0 - u * u).sqrt()]));
        let inner_w = 0.8 * half_w;
        let inner_u = [-0.5, 0.0, 0.5];
        let mut inner = vec![[mx - inner_w, my]];
        inner.extend(inner_u.iter().map(|u| [mx + u * inner_w, my - 0.5 * gap * (1.0 - u * u).sqrt()]));
        inner.push([mx + inner_w, my]);
        inner.extend(inner_u.iter().rev().map(|u| [mx + u * inner_w, my + 0.5 * gap * (1.0 - u * u).sqrt()]));
        for (i, p) in OUTER_LIP.zip(outer) {
            pts[i] = p;
        }
        for (i, p) in INNER_LIP.zip(inner) {
            pts[i] = p;
        }
        LandmarkSet::new(pts)
    }

    fn shade(&self, x: f64, y: f64, lm: &LandmarkSet) -> [f32; 3] {
        let [cx, cy] = self.center;
        let [a, b] = self.half_axes;
        let bg = [0.2 + 0.1 * (y / (2.0 * cy)) as f32, 0.25, 0.32];
        let r2 = ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2);
        if r2 > 1.0 {
            return bg;
        }
        let light = (1.0 - 0.25 * r2 - 0.08 * (x - cx) / a) as f32;
        let mut rgb = self.skin.map(|s| s * light);
        let pts = lm.points();
        for base in [36, 42] {
            if inside(&pts[base..base + 6], x, y) {
                rgb = [0.12, 0.1, 0.1];
            }
        }
        if inside(&pts[17..22], x, y + 0.03 * b) || inside(&pts[22..27], x, y + 0.03 * b) {
            rgb = rgb.map(|v| v * 0.6);
        }
        let nose = ((x - cx) / (0.12 * a)).powi(2) + ((y - (cy + 0.08 * b)) / (0.12 * b)).powi(2);
        if nose < 1.0 {
            rgb = rgb.map(|v| v * (0.88 + 0.12 * nose as f32));
        }
        let outer = &pts[OUTER_LIP];
        if inside(outer, x, y) {
            rgb = self.lip;
            if inside(&pts[INNER_LIP], x, y) {
                rgb = self.mouth_interior(x, y);
            }
        }
        rgb
    }

    fn mouth_interior(&self, x: f64, y: f64) -> [f32; 3] {
        let ([mx, my], half_w, gap, _) = self.mouth_geometry();
        let top = my - 0.5 * gap;
        let teeth_bottom = my + 0.15 * gap;
        if y < teeth_bottom {
            let tooth_w = 0.22 * half_w;
            let u = (x - mx) / tooth_w + self.teeth_phase;
            let frac = u - u.floor();
            let edge = (frac.min(1.0 - frac) / 0.12).min(1.0);
            let depth = ((y - top) / (teeth_bottom - top + 1e-9)).clamp(0.0, 1.0);
            let v = (0.92 - 0.12 * depth as f32) * (0.55 + 0.45 * edge as f32);
            [v, v * 0.98, v * 0.92]
        } else {
            [0.18, 0.05, 0.07]
        }
    }

    /// Renders with 3×3 supersampling.
    pub fn render(&self, width: usize, height: usize) -> Result<(ImageF32, LandmarkSet)> {
        let lm = self.landmarks()?;
        let mut img = ImageF32::zeros(width, height);
        const SS: usize = 3;
        for y in 0..height {
            for x in 0..width {
                let mut acc = [0.0f32; 3];
                for sy in 0..SS {
                    for sx in 0..SS {
                        let px = x as f64 + (sx as f64 + 0.5) / SS as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SS as f64;
                        let c = self.shade(px, py, &lm);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                for (k, v) in acc.iter().enumerate() {
                    img.set(k, x, y, v / (SS * SS) as f32);
                }
            }
        }
        Ok((img, lm))
    }
}

fn inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut c = false;
    for (i, a) in poly.iter().enumerate() {
        let b = poly[(i + 1) % poly.len()];
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            c = !c;
        }
    }
    c
}

/// A frame with its landmarks and the video it belongs to.
#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub image: ImageF32,
    pub landmarks: LandmarkSet,
}

/// Independent random faces.
pub fn synthesize_faces<R: Rng>(n: usize, width: usize, height: usize, rng: &mut R) -> Result<Vec<SyntheticFrame>> {
    (0..n)
        .map(|_| {
            let (image, landmarks) = ToyFace::random(rng, width, height).render(width, height)?;
            Ok(SyntheticFrame { image, landmarks })
        })
        .collect()
}

/// A talking-face clip: one identity, slowly drifting head and a mouth that opens and
/// closes over time.
pub fn synthesize_video<R: Rng>(n: usize, width: usize, height: usize, rng: &mut R) -> Result<Vec<SyntheticFrame>> {
    let base = ToyFace::random(rng, width, height);
    let period = rng.random_range(6.0..12.0);
    (0..n)
        .map(|t| {
            let phase = 2.0 * PI * t as f64 / period;
            let face = ToyFace {
                center: [
                    base.center[0] + 1.5 * (0.3 * t as f64).sin(),
                    base.center[1] + 0.8 * (0.2 * t as f64).cos(),
                ],
                mouth_open: 0.5 + 0.35 * phase.sin(),
                ..base
            };
            let (image, landmarks) = face.render(width, height)?;
            Ok(SyntheticFrame { image, landmarks })
        })
        .collect()
}

/// Box-blurs the mouth region, imitating the soft teeth of generated talking faces.
pub fn degrade_mouth(frame: &ImageF32, landmarks: &LandmarkSet, radius: usize) -> ImageF32 {
    let pts = &landmarks.points()[OUTER_LIP];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let clampi = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
    let (w, h) = (frame.width(), frame.height());
    let (x0, x1) = (clampi(x0.floor(), w - 1), clampi(x1.ceil(), w - 1));
    let (y0, y1) = (clampi(y0.floor(), h - 1), clampi(y1.ceil(), h - 1));
    let mut out = frame.clone();
    let r = radius as isize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            for c in 0..3 {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sx, sy) = (x as isize + dx, y as isize + dy);
                        if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                            acc += frame.get(c, sx as usize, sy as usize);
                            n += 1.0;
                        }
                    }
                }
                out.set(c, x, y, acc / n);
            }
        }
    }
    out
}
