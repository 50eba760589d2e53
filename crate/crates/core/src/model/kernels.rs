//! Fused CPU kernels for the pointwise and pooling layers, each with an analytic
//! backward pass.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

pub(crate) fn slice<'a, T>(data: &'a [T], layout: &Layout, op: &str) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("{op} needs contiguous inputs"),
    }
}

/// Runs `$body` with `$a` bound to a float slice of one storage.
macro_rules! float_one {
    ($op:expr, $s:expr, $l:expr, |$a:ident| $body:expr) => {
        match $s {
            CpuStorage::F32(x) => {
                let $a = slice(x, $l, $op)?;
                CpuStorage::F32($body)
            }
            CpuStorage::F64(x) => {
                let $a = slice(x, $l, $op)?;
                CpuStorage::F64($body)
            }
            x => candle_core::bail!("{} needs f32/f64 input, got {:?}", $op, x.dtype()),
        }
    };
}

/// Runs `$body` with `$a`/`$b` bound to same-typed float slices of two storages.
macro_rules! float_pair {
    ($op:expr, $s1:expr, $l1:expr, $s2:expr, $l2:expr, |$a:ident, $b:ident| $body:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(x), CpuStorage::F32(y)) => {
                let ($a, $b) = (slice(x, $l1, $op)?, slice(y, $l2, $op)?);
                CpuStorage::F32($body)
            }
            (CpuStorage::F64(x), CpuStorage::F64(y)) => {
                let ($a, $b) = (slice(x, $l1, $op)?, slice(y, $l2, $op)?);
                CpuStorage::F64($body)
            }
            (x, y) => candle_core::bail!(
                "{} needs matching f32/f64 inputs, got {:?} and {:?}",
                $op,
                x.dtype(),
                y.dtype()
            ),
        }
    };
}

pub(crate) use float_pair;

fn dims4(l: &Layout) -> candle_core::Result<(usize, usize, usize, usize)> {
    l.shape().dims4()
}

struct LeakyRelu(f64);
struct LeakyReluGrad(f64);

impl CustomOp1 for LeakyRelu {
    fn name(&self) -> &'static str {
        "leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: WithDType>(x: &[T], slope: f64) -> Vec<T> {
            let k = T::from_f64(slope);
            x.iter().map(|&v| if v > T::zero() { v } else { v * k }).collect()
        }
        Ok((float_one!("leaky_relu", s, l, |x| run(x, self.0)), l.shape().clone()))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, dy: &Tensor) -> candle_core::Result<Option<Tensor>> {
        x.apply_op2_no_bwd(&dy.contiguous()?, &LeakyReluGrad(self.0)).map(Some)
    }
}

impl CustomOp2 for LeakyReluGrad {
    fn name(&self) -> &'static str {
        "leaky-relu-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: WithDType>(x: &[T], dy: &[T], slope: f64) -> Vec<T> {
            let k = T::from_f64(slope);
            x.iter().zip(dy).map(|(&v, &g)| if v > T::zero() { g } else { g * k }).collect()
        }
        Ok((float_pair!("leaky_relu backward", s1, l1, s2, l2, |x, dy| run(x, dy, self.0)), l1.shape().clone()))
    }
}

/// `max(x, 0) + slope · min(x, 0)`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(LeakyRelu(slope))?)
}

struct InstanceNorm(f64);
struct InstanceNormGrad(f64);

/// Mean and `1/sqrt(var + eps)` of one plane.
fn plane_stats<T: WithDType>(p: &[T], eps: f64) -> (f64, f64) {
    let n = p.len() as f64;
    let mean = p.iter().map(|v| v.to_f64()).sum::<f64>() / n;
    let var = p.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

impl CustomOp1 for InstanceNorm {
    fn name(&self) -> &'static str {
        "instance-norm"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_, _, h, w) = dims4(l)?;
        fn run<T: WithDType>(x: &[T], hw: usize, eps: f64) -> Vec<T> {
            let mut out = Vec::with_capacity(x.len());
            for p in x.chunks(hw) {
                let (mean, inv) = plane_stats(p, eps);
                out.extend(p.iter().map(|v| T::from_f64((v.to_f64() - mean) * inv)));
            }
            out
        }
        Ok((float_one!("instance_norm", s, l, |x| run(x, h * w, self.0)), l.shape().clone()))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, dy: &Tensor) -> candle_core::Result<Option<Tensor>> {
        x.apply_op2_no_bwd(&dy.contiguous()?, &InstanceNormGrad(self.0)).map(Some)
    }
}

impl CustomOp2 for InstanceNormGrad {
    fn name(&self) -> &'static str {
        "instance-norm-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_, _, h, w) = dims4(l1)?;
        // dx = inv · (dy − mean(dy) − y · mean(dy · y))
        fn run<T: WithDType>(x: &[T], dy: &[T], hw: usize, eps: f64) -> Vec<T> {
            let mut out = Vec::with_capacity(x.len());
            for (p, g) in x.chunks(hw).zip(dy.chunks(hw)) {
                let (mean, inv) = plane_stats(p, eps);
                let n = hw as f64;
                let (mut g_mean, mut gy_mean) = (0.0, 0.0);
                for (v, d) in p.iter().zip(g) {
                    let y = (v.to_f64() - mean) * inv;
                    g_mean += d.to_f64();
                    gy_mean += d.to_f64() * y;
                }
                let (g_mean, gy_mean) = (g_mean / n, gy_mean / n);
                out.extend(p.iter().zip(g).map(|(v, d)| {
                    let y = (v.to_f64() - mean) * inv;
                    T::from_f64(inv * (d.to_f64() - g_mean - y * gy_mean))
                }));
            }
            out
        }
        Ok((
            float_pair!("instance_norm backward", s1, l1, s2, l2, |x, dy| run(x, dy, h * w, self.0)),
            l1.shape().clone(),
        ))
    }
}

/// Per-sample, per-channel normalization of `(N, C, H, W)` over the spatial axes.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    x.dims4()?;
    Ok(x.contiguous()?.apply_op1(InstanceNorm(eps))?)
}

struct MaxPool2;
struct MaxPool2Grad;

/// Flat offset (within the plane) of the first maximum of each 2×2 window.
#[inline]
fn window_argmax<T: WithDType>(p: &[T], w: usize, oy: usize, ox: usize) -> usize {
    let base = 2 * oy * w + 2 * ox;
    let mut best = base;
    for off in [base + 1, base + w, base + w + 1] {
        if p[off] > p[best] {
            best = off;
        }
    }
    best
}

impl CustomOp1 for MaxPool2 {
    fn name(&self) -> &'static str {
        "max-pool2"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = dims4(l)?;
        fn run<T: WithDType>(x: &[T], h: usize, w: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(x.len() / 4);
            for p in x.chunks(h * w) {
                for oy in 0..h / 2 {
                    for ox in 0..w / 2 {
                        out.push(p[window_argmax(p, w, oy, ox)]);
                    }
                }
            }
            out
        }
        Ok((float_one!("max_pool2", s, l, |x| run(x, h, w)), Shape::from((n, c, h / 2, w / 2))))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, dy: &Tensor) -> candle_core::Result<Option<Tensor>> {
        x.apply_op2_no_bwd(&dy.contiguous()?, &MaxPool2Grad).map(Some)
    }
}

impl CustomOp2 for MaxPool2Grad {
    fn name(&self) -> &'static str {
        "max-pool2-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_, _, h, w) = dims4(l1)?;
        fn run<T: WithDType>(x: &[T], dy: &[T], h: usize, w: usize) -> Vec<T> {
            let (hw, ohw) = (h * w, (h / 2) * (w / 2));
            let mut out = vec![T::zero(); x.len()];
            for ((p, g), d) in x.chunks(hw).zip(dy.chunks(ohw)).zip(out.chunks_mut(hw)) {
                for oy in 0..h / 2 {
                    for ox in 0..w / 2 {
                        d[window_argmax(p, w, oy, ox)] += g[oy * (w / 2) + ox];
                    }
                }
            }
            out
        }
        Ok((float_pair!("max_pool2 backward", s1, l1, s2, l2, |x, dy| run(x, dy, h, w)), l1.shape().clone()))
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows and columns are dropped. The whole
/// gradient of each window goes to its first maximum.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("max_pool2 needs at least 2x2 input, got {h}x{w}")));
    }
    Ok(x.contiguous()?.apply_op1(MaxPool2)?)
}

struct Upsample(usize);
struct SumPool(usize);

impl CustomOp1 for Upsample {
    fn name(&self) -> &'static str {
        "upsample-nearest"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = dims4(l)?;
        let f = self.0;
        fn run<T: WithDType>(x: &[T], h: usize, w: usize, f: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(x.len() * f * f);
            for p in x.chunks(h * w) {
                for y in 0..h {
                    let line = &p[y * w..(y + 1) * w];
                    for _ in 0..f {
                        for &v in line {
                            out.extend(std::iter::repeat_n(v, f));
                        }
                    }
                }
            }
            out
        }
        Ok((float_one!("upsample", s, l, |x| run(x, h, w, f)), Shape::from((n, c, h * f, w * f))))
    }

    fn bwd(&self, _x: &Tensor, _res: &Tensor, dy: &Tensor) -> candle_core::Result<Option<Tensor>> {
        dy.contiguous()?.apply_op1_no_bwd(&SumPool(self.0)).map(Some)
    }
}

impl CustomOp1 for SumPool {
    fn name(&self) -> &'static str {
        "sum-pool"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = dims4(l)?;
        let f = self.0;
        fn run<T: WithDType>(x: &[T], h: usize, w: usize, f: usize) -> Vec<T> {
            let (oh, ow) = (h / f, w / f);
            let mut out = vec![T::zero(); x.len() / (f * f)];
            for (p, d) in x.chunks(h * w).zip(out.chunks_mut(oh * ow)) {
                for y in 0..h {
                    for x in 0..w {
                        d[(y / f) * ow + x / f] += p[y * w + x];
                    }
                }
            }
            out
        }
        Ok((float_one!("sum_pool", s, l, |x| run(x, h, w, f)), Shape::from((n, c, h / f, w / f))))
    }
}

/// Nearest-neighbour upsampling of `(N, C, H, W)` by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    x.dims4()?;
    if factor == 0 {
        return Err(Error::Shape("upsampling factor must be positive".into()));
    }
    Ok(x.contiguous()?.apply_op1(Upsample(factor))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var, D};
    use rand::{Rng, SeedableRng};

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    /// Forward values and input gradients of `f` against a composition of candle ops.
    fn compare(shape: &[usize], f: impl Fn(&Tensor) -> Tensor, reference: impl Fn(&Tensor) -> Tensor) {
        let x = Var::from_tensor(&rand(shape, 1)).unwrap();
        let (ours, theirs) = (f(x.as_tensor()), reference(x.as_tensor()));
        assert_eq!(ours.dims(), theirs.dims());
        assert!(max_abs_diff(&ours, &theirs) < 1e-12);
        let probe = rand(ours.dims(), 2);
        let g1 = (&ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = (&theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let (g1, g2) = (g1.get(x.as_tensor()).unwrap(), g2.get(x.as_tensor()).unwrap());
        assert!(max_abs_diff(g1, g2) < 1e-10, "gradient differs by {}", max_abs_diff(g1, g2));
    }

    #[test]
    fn leaky_relu_matches_composition() {
        compare(&[2, 3, 5, 4], |x| leaky_relu(x, 0.2).unwrap(), |x| {
            candle_nn::ops::leaky_relu(x, 0.2).unwrap()
        });
    }

    #[test]
    fn instance_norm_matches_composition() {
        compare(&[2, 3, 5, 4], |x| instance_norm(x, 1e-5).unwrap(), |x| {
            let (n, c, h, w) = x.dims4().unwrap();
            let flat = x.reshape((n, c, h * w)).unwrap();
            let centered = flat.broadcast_sub(&flat.mean_keepdim(D::Minus1).unwrap()).unwrap();
            let var = centered.sqr().unwrap().mean_keepdim(D::Minus1).unwrap();
            let sd = (var + 1e-5).unwrap().sqrt().unwrap();
            centered.broadcast_div(&sd).unwrap().reshape((n, c, h, w)).unwrap()
        });
    }

    #[test]
    fn max_pool2_matches_reduction() {
        compare(&[2, 3, 7, 6], |x| max_pool2(x).unwrap(), |x| {
            let (n, c, h, w) = x.dims4().unwrap();
            let x = x.narrow(2, 0, h / 2 * 2).unwrap().contiguous().unwrap();
            x.reshape((n, c, h / 2, 2, w / 2, 2)).unwrap().max(5).unwrap().max(3).unwrap()
        });
    }

    #[test]
    fn max_pool2_ties_route_to_one_input() {
        let x = Var::from_tensor(&Tensor::ones((1, 1, 2, 2), candle_core::DType::F64, &Device::Cpu).unwrap()).unwrap();
        let g = max_pool2(x.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
        let g = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(g, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_matches_candle() {
        for f in [2, 4] {
            compare(&[2, 3, 3, 5], |x| upsample_nearest(x, f).unwrap(), |x| {
                x.upsample_nearest2d(3 * f, 5 * f).unwrap()
            });
        }
    }

    #[test]
    fn shape_errors() {
        assert!(max_pool2(&rand(&[1, 1, 1, 4], 0)).is_err());
        assert!(upsample_nearest(&rand(&[1, 1, 2, 2], 0), 0).is_err());
        assert!(instance_norm(&rand(&[4, 4], 0), 1e-5).is_err());
    }
}
