//! Scanline polygon fill and integer line drawing on a `width × height` grid.
//!
//! Grid convention: pixel `(u, v)` covers `[u, u+1) × [v, v+1)` and is sampled at its centre.

/// Binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn set_checked(&mut self, u: i64, v: i64) {
        if u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height {
            self.data[v as usize * self.width + u as usize] = true;
        }
    }
}

/// Even-odd fill: a pixel is inside when its centre is.
pub fn fill_polygon(points: &[[f64; 2]], width: usize, height: usize) -> Mask {
    let mut mask = Mask::new(width, height);
    if points.len() < 3 {
        return mask;
    }
    let mut crossings = Vec::with_capacity(points.len());
    for v in 0..height {
        let y = v as f64 + 0.5;
        crossings.clear();
        for (i, a) in points.iter().enumerate() {
            let b = points[(i + 1) % points.len()];
            // half-open in y so shared vertices are counted once
            if (a[1] <= y) != (b[1] <= y) {
                let t = (y - a[1]) / (b[1] - a[1]);
                crossings.push(a[0] + t * (b[0] - a[0]));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // centres u + 0.5 in [x0, x1)
            let start = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(width as f64);
            let row = &mut mask.data[v * width..(v + 1) * width];
            let (mut u, end) = (start as i64, end as i64);
            while u < end {
                row[u as usize] = true;
                u += 1;
            }
        }
    }
    mask
}

/// Pixel holding a continuous grid coordinate.
#[inline]
pub fn pixel_of(p: [f64; 2]) -> (i64, i64) {
    (p[0].floor() as i64, p[1].floor() as i64)
}

/// Draws a segment between two pixels, one pixel per step along the major axis.
/// The minor coordinate is the ideal line's value rounded half-up.
pub fn draw_line(mask: &mut Mask, from: (i64, i64), to: (i64, i64)) {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let steps = dx.abs().max(dy.abs());
    if steps == 0 {
        mask.set_checked(from.0, from.1);
        return;
    }
    let x_major = dx.abs() >= dy.abs();
    let (major_dir, minor_delta) = if x_major {
        (dx.signum(), dy)
    } else {
        (dy.signum(), dx)
    };
    for i in 0..=steps {
        // round(i * minor_delta / steps) with ties toward +inf
        let minor = (2 * i * minor_delta + steps).div_euclid(2 * steps);
        if x_major {
            mask.set_checked(from.0 + i * major_dir, from.1 + minor);
        } else {
            mask.set_checked(from.0 + minor, from.1 + i * major_dir);
        }
    }
}

pub fn draw_closed_polyline(mask: &mut Mask, points: &[[f64; 2]]) {
    for (i, &a) in points.iter().enumerate() {
        let b = points[(i + 1) % points.len()];
        draw_line(mask, pixel_of(a), pixel_of(b));
    }
}
