//! Brute-force reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use hdtr_core::geometry::{LandmarkSet, CROP_SIZE};
use hdtr_core::metrics::GrayImage;
use hdtr_core::training::ToyFace;
use rand::Rng;

pub fn px(img: &GrayImage, x: i64, y: i64) -> Option<f64> {
    if x < 0 || y < 0 || x as usize >= img.width() || y as usize >= img.height() {
        None
    } else {
        Some(img.get(x as usize, y as usize))
    }
}

fn pixels(img: &GrayImage) -> impl Iterator<Item = (i64, i64)> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    (0..h).flat_map(move |y| (0..w).map(move |x| (x, y)))
}

pub fn brenner(img: &GrayImage) -> f64 {
    let mut s = 0.0;
    for (x, y) in pixels(img) {
        if let (Some(a), Some(b)) = (px(img, x, y), px(img, x + 2, y)) {
            s += (b - a) * (b - a);
        }
    }
    s
}

pub fn laplacian(img: &GrayImage) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (x, y) in pixels(img) {
        let taps = [(0, -1, 1.0), (-1, 0, 1.0), (0, 0, -4.0), (1, 0, 1.0), (0, 1, 1.0)];
        let mut r = 0.0;
        let mut valid = true;
        for (dx, dy, k) in taps {
            match px(img, x + dx, y + dy) {
                Some(v) => r += k * v,
                None => valid = false,
            }
        }
        if valid {
            s += r * r;
            n += 1;
        }
    }
    s / n as f64
}

pub fn smd(img: &GrayImage) -> f64 {
    let mut s = 0.0;
    for (x, y) in pixels(img) {
        let c = px(img, x, y).unwrap();
        if let Some(up) = px(img, x, y - 1) {
            s += (c - up).abs();
        }
        if let Some(right) = px(img, x + 1, y) {
            s += (c - right).abs();
        }
    }
    s
}

pub fn smd2(img: &GrayImage) -> f64 {
    let mut s = 0.0;
    for (x, y) in pixels(img) {
        let c = px(img, x, y).unwrap();
        if let (Some(r), Some(d)) = (px(img, x + 1, y), px(img, x, y + 1)) {
            s += (c - r).abs() * (c - d).abs();
        }
    }
    s
}

pub fn variance(img: &GrayImage) -> f64 {
    let all: Vec<f64> = pixels(img).map(|(x, y)| px(img, x, y).unwrap()).collect();
    let mu = all.iter().sum::<f64>() / all.len() as f64;
    all.iter().map(|v| (v - mu) * (v - mu)).sum()
}

pub fn energy(img: &GrayImage) -> f64 {
    let mut s = 0.0;
    for (x, y) in pixels(img) {
        let c = px(img, x, y).unwrap();
        if let Some(r) = px(img, x + 1, y) {
            s += (r - c) * (r - c);
        }
        if let Some(d) = px(img, x, y + 1) {
            s += (d - c) * (d - c);
        }
    }
    s
}

pub fn vollath(img: &GrayImage) -> f64 {
    let mut s = 0.0;
    for (x, y) in pixels(img) {
        let c = px(img, x, y).unwrap();
        if let Some(a) = px(img, x + 1, y) {
            s += c * a;
        }
        if let Some(b) = px(img, x + 2, y) {
            s -= c * b;
        }
    }
    s
}

pub fn entropy(img: &GrayImage) -> f64 {
    let mut counts = std::collections::HashMap::<i64, usize>::new();
    for (x, y) in pixels(img) {
        let v = px(img, x, y).unwrap().round().clamp(0.0, 255.0) as i64;
        *counts.entry(v).or_default() += 1;
    }
    let n = (img.width() * img.height()) as f64;
    let mut h = 0.0;
    for c in counts.values() {
        let p = *c as f64 / n;
        h -= p * p.log2();
    }
    h.max(0.0)
}

/// All eight oracles in report order.
pub fn all_metrics(img: &GrayImage) -> [f64; 8] {
    [
        brenner(img),
        laplacian(img),
        smd(img),
        smd2(img),
        variance(img),
        energy(img),
        vollath(img),
        entropy(img),
    ]
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Separable Gaussian blur, kernel radius ⌈3σ⌉, replicated borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let at = |x: i64, y: i64| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    let horiz = GrayImage::from_fn(w as usize, h as usize, |x, y| {
        (-r..=r).map(|i| k[(i + r) as usize] * at(x as i64 + i, y as i64)).sum::<f64>() / norm
    })
    .unwrap();
    let at2 = |x: i64, y: i64| horiz.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    GrayImage::from_fn(w as usize, h as usize, |x, y| {
        (-r..=r).map(|i| k[(i + r) as usize] * at2(x as i64, y as i64 + i)).sum::<f64>() / norm
    })
    .unwrap()
}

/// Crossing-number point-in-polygon test (PNPOLY) at one point.
pub fn pnpoly(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixels of a `size × size` grid whose centre lies inside `poly`.
pub fn polygon_pixel_count(poly: &[[f64; 2]], size: usize) -> usize {
    let mut n = 0;
    for v in 0..size {
        for u in 0..size {
            if pnpoly(poly, [u as f64 + 0.5, v as f64 + 0.5]) {
                n += 1;
            }
        }
    }
    n
}

pub fn shoelace_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

pub fn perimeter(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        })
        .sum()
}

/// Whether pixel `q` belongs to the one-pixel-per-major-step segment from `a` to `b`,
/// decided by exhaustive search over the steps.
pub fn on_segment(a: (i64, i64), b: (i64, i64), q: (i64, i64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let steps = dx.abs().max(dy.abs());
    if steps == 0 {
        return q == a;
    }
    let x_major = dx.abs() >= dy.abs();
    for i in 0..=steps {
        let (major, minor, minor_d) = if x_major {
            (a.0 + i * dx.signum(), q.1 - a.1, dy)
        } else {
            (a.1 + i * dy.signum(), q.0 - a.0, dx)
        };
        let q_major = if x_major { q.0 } else { q.1 };
        if q_major != major {
            continue;
        }
        let e = 2 * (minor * steps - i * minor_d);
        if -steps < e && e <= steps {
            return true;
        }
    }
    false
}

/// Pixel count of the union of closed polylines on a `size × size` grid.
pub fn polyline_pixel_count(polys: &[Vec<[f64; 2]>], size: usize) -> usize {
    let to_px = |p: [f64; 2]| (p[0].floor() as i64, p[1].floor() as i64);
    let mut segs = Vec::new();
    for poly in polys {
        for i in 0..poly.len() {
            segs.push((to_px(poly[i]), to_px(poly[(i + 1) % poly.len()])));
        }
    }
    let mut n = 0;
    for v in 0..size as i64 {
        for u in 0..size as i64 {
            if segs.iter().any(|&(a, b)| on_segment(a, b, (u, v))) {
                n += 1;
            }
        }
    }
    n
}

/// A random toy face in a `w × h` frame, its landmarks jittered by up to `jitter` pixels.
pub fn random_landmarks<R: Rng>(rng: &mut R, w: usize, h: usize, jitter: f64) -> LandmarkSet {
    loop {
        let face = ToyFace::random(rng, w, h);
        let lm = face.landmarks().unwrap();
        let pts: Vec<[f64; 2]> = lm
            .points()
            .iter()
            .map(|p| {
                [
                    p[0] + rng.random_range(-jitter..=jitter),
                    p[1] + rng.random_range(-jitter..=jitter),
                ]
            })
            .collect();
        if let Ok(lm) = LandmarkSet::new(pts) {
            return lm;
        }
    }
}

pub const CROP: usize = CROP_SIZE;
