//! Convolutions lowered to im2col and matrix multiplies, with hand-written backward
//! kernels (col2im for the input gradient).

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Module, Shape, Tensor, WithDType};

use super::kernels::{float_pair, slice};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Window {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Rows of the unfolded matrix: `c·k·k`, ordered channel-major like a conv kernel.
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        let (ho, wo) = self.out_hw();
        ho * wo
    }

    fn image(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Calls `f(row, oy, iy, ix_of)` for each unfolded row and output line, with `iy`
    /// the input line it reads (`None` when it falls in the padding).
    #[inline]
    fn for_each_line(&self, mut f: impl FnMut(usize, usize, Option<usize>, usize)) {
        let (ho, _) = self.out_hw();
        for ch in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let iy = (iy >= 0 && iy < self.h as isize).then(|| ch * self.h + iy as usize);
                        f(row, oy, iy, kx);
                    }
                }
            }
        }
    }

    /// Output columns `[lo, hi)` whose input column `ox·stride + kx − pad` is in range.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let (_, wo) = self.out_hw();
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride).min(wo);
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// One sample `(C, H, W)` → `(C·k·k, L)`.
    fn unfold<T: WithDType>(&self, src: &[T], dst: &mut [T]) {
        let (_, wo) = self.out_hw();
        let l = self.cols();
        self.for_each_line(|row, oy, iy, kx| {
            let d = &mut dst[row * l + oy * wo..row * l + (oy + 1) * wo];
            let Some(iy) = iy else {
                d.fill(T::zero());
                return;
            };
            let (lo, hi) = self.valid_cols(kx);
            d[..lo].fill(T::zero());
            d[hi..].fill(T::zero());
            let line = &src[iy * self.w..(iy + 1) * self.w];
            let first = lo * self.stride + kx - self.pad;
            if self.stride == 1 {
                d[lo..hi].copy_from_slice(&line[first..first + hi - lo]);
            } else {
                for (j, v) in d[lo..hi].iter_mut().enumerate() {
                    *v = line[first + j * self.stride];
                }
            }
        });
    }

    /// The adjoint of [`Window::unfold`]: scatter-adds `(C·k·k, L)` onto `(C, H, W)`.
    fn fold<T: WithDType>(&self, src: &[T], dst: &mut [T]) {
        let (_, wo) = self.out_hw();
        let l = self.cols();
        dst.fill(T::zero());
        self.for_each_line(|row, oy, iy, kx| {
            let Some(iy) = iy else { return };
            let s = &src[row * l + oy * wo..row * l + (oy + 1) * wo];
            let (lo, hi) = self.valid_cols(kx);
            let line = &mut dst[iy * self.w..(iy + 1) * self.w];
            let first = lo * self.stride + kx - self.pad;
            for (j, v) in s[lo..hi].iter().enumerate() {
                line[first + j * self.stride] += *v;
            }
        });
    }
}

/// A matrix view: slice plus row and column strides.
#[derive(Clone, Copy)]
struct Mat<'a, T> {
    data: &'a [T],
    rs: usize,
    cs: usize,
}

impl<'a, T> Mat<'a, T> {
    fn rows(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    fn t(self) -> Self {
        Self {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn fits(&self, r: usize, c: usize) -> bool {
        r == 0 || c == 0 || (r - 1) * self.rs + (c - 1) * self.cs < self.data.len()
    }
}

/// `dst (m×n, row-major) = a (m×k) · b (k×n)`, or `+=` with `accumulate`.
fn gemm<T: WithDType>(m: usize, n: usize, k: usize, dst: &mut [T], accumulate: bool, a: Mat<'_, T>, b: Mat<'_, T>) {
    assert!(dst.len() >= m * n && a.fits(m, k) && b.fits(k, n), "gemm operands out of bounds");
    // SAFETY: every index the kernel touches lies within the slices, checked above.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            a.data.as_ptr(),
            a.cs as isize,
            a.rs as isize,
            b.data.as_ptr(),
            b.cs as isize,
            b.rs as isize,
            T::one(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        )
    }
}

/// Batch size implied by a slice holding whole samples of `per` elements.
fn batch(len: usize, per: usize) -> usize {
    if per == 0 {
        0
    } else {
        len / per
    }
}

/// `out[n] = W · unfold(x[n]) + b`.
fn conv_fwd<T: WithDType>(g: Window, o: usize, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let (p, l) = (g.patch(), g.cols());
    let n = batch(x.len(), g.image());
    let mut cols = vec![T::zero(); p * l];
    let mut out = vec![T::zero(); n * o * l];
    for b in 0..n {
        g.unfold(&x[b * g.image()..(b + 1) * g.image()], &mut cols);
        let dst = &mut out[b * o * l..(b + 1) * o * l];
        gemm(o, l, p, dst, false, Mat::rows(w, p), Mat::rows(&cols, l));
        for (row, &bv) in dst.chunks_mut(l).zip(bias) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// `∂W = Σ_n dy[n] · unfold(x[n])ᵀ`, accumulated transposed and flipped back at the end.
fn conv_grad_weight<T: WithDType>(g: Window, o: usize, x: &[T], dy: &[T]) -> Vec<T> {
    let (p, l) = (g.patch(), g.cols());
    let n = batch(x.len(), g.image());
    let mut cols = vec![T::zero(); p * l];
    let mut dwt = vec![T::zero(); p * o];
    for b in 0..n {
        g.unfold(&x[b * g.image()..(b + 1) * g.image()], &mut cols);
        let dy_b = Mat::rows(&dy[b * o * l..(b + 1) * o * l], l).t();
        gemm(p, o, l, &mut dwt, b > 0, Mat::rows(&cols, l), dy_b);
    }
    let mut dw = vec![T::zero(); o * p];
    for (i, row) in dwt.chunks(o).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            dw[j * p + i] = v;
        }
    }
    dw
}

/// `∂x`. With unit stride this is itself a convolution of `dy` with the flipped,
/// transposed kernel; otherwise `fold(Wᵀ · dy[n])`.
fn conv_grad_input<T: WithDType>(g: Window, o: usize, dy: &[T], w: &[T]) -> Vec<T> {
    let (p, l) = (g.patch(), g.cols());
    if g.stride == 1 && g.pad < g.k {
        let (ho, wo) = g.out_hw();
        let kk = g.k * g.k;
        let mut flipped = vec![T::zero(); g.c * o * kk];
        for oc in 0..o {
            for ic in 0..g.c {
                for t in 0..kk {
                    flipped[(ic * o + oc) * kk + t] = w[(oc * g.c + ic) * kk + kk - 1 - t];
                }
            }
        }
        let back = Window {
            c: o,
            h: ho,
            w: wo,
            k: g.k,
            stride: 1,
            pad: g.k - 1 - g.pad,
        };
        return conv_fwd(back, g.c, dy, &flipped, &vec![T::zero(); g.c]);
    }
    let n = batch(dy.len(), o * l);
    let mut cols = vec![T::zero(); p * l];
    let mut dx = vec![T::zero(); n * g.image()];
    for b in 0..n {
        gemm(p, l, o, &mut cols, false, Mat::rows(w, p).t(), Mat::rows(&dy[b * o * l..(b + 1) * o * l], l));
        g.fold(&cols, &mut dx[b * g.image()..(b + 1) * g.image()]);
    }
    dx
}

/// Convolution of `(x, weight, bias)`; the backward pass is three more custom ops.
struct Conv(Window);

/// `∂x` from `(dy, weight)`.
struct ConvGradInput(Window);

/// `∂W` from `(x, dy)`.
struct ConvGradWeight(Window, usize);

/// `∂b`: per-channel sum of `(N, C, H, W)`.
struct ChannelSum;

impl CustomOp3 for Conv {
    fn name(&self) -> &'static str {
        "conv2d-im2col"
    }

    fn cpu_fwd(
        &self,
        x: &CpuStorage,
        xl: &Layout,
        w: &CpuStorage,
        wl: &Layout,
        b: &CpuStorage,
        bl: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let (n, o) = (xl.dims()[0], wl.dims()[0]);
        let (ho, wo) = g.out_hw();
        let out = match (x, w, b) {
            (CpuStorage::F32(x), CpuStorage::F32(w), CpuStorage::F32(b)) => {
                let (x, w, b) = (slice(x, xl, "conv2d")?, slice(w, wl, "conv2d")?, slice(b, bl, "conv2d")?);
                CpuStorage::F32(conv_fwd(g, o, x, w, b))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w), CpuStorage::F64(b)) => {
                let (x, w, b) = (slice(x, xl, "conv2d")?, slice(w, wl, "conv2d")?, slice(b, bl, "conv2d")?);
                CpuStorage::F64(conv_fwd(g, o, x, w, b))
            }
            (x, w, b) => candle_core::bail!(
                "conv2d needs matching f32/f64 inputs, got {:?}, {:?} and {:?}",
                x.dtype(),
                w.dtype(),
                b.dtype()
            ),
        };
        Ok((out, Shape::from((n, o, ho, wo))))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _b: &Tensor,
        _res: &Tensor,
        dy: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let dy = dy.contiguous()?;
        let dx = dy.apply_op2_no_bwd(w, &ConvGradInput(self.0))?;
        let dw = x.apply_op2_no_bwd(&dy, &ConvGradWeight(self.0, w.dims()[0]))?;
        let db = dy.apply_op1_no_bwd(&ChannelSum)?;
        Ok((Some(dx), Some(dw), Some(db)))
    }
}

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "conv2d-grad-input"
    }

    fn cpu_fwd(&self, dy: &CpuStorage, dyl: &Layout, w: &CpuStorage, wl: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let (n, o) = (dyl.dims()[0], wl.dims()[0]);
        let out = float_pair!("conv2d backward", dy, dyl, w, wl, |dy, w| conv_grad_input(g, o, dy, w));
        Ok((out, Shape::from((n, g.c, g.h, g.w))))
    }
}

impl CustomOp2 for ConvGradWeight {
    fn name(&self) -> &'static str {
        "conv2d-grad-weight"
    }

    fn cpu_fwd(&self, x: &CpuStorage, xl: &Layout, dy: &CpuStorage, dyl: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (g, o) = (self.0, self.1);
        let out = float_pair!("conv2d backward", x, xl, dy, dyl, |x, dy| conv_grad_weight(g, o, x, dy));
        Ok((out, Shape::from((o, g.c, g.k, g.k))))
    }
}

impl CustomOp1 for ChannelSum {
    fn name(&self) -> &'static str {
        "channel-sum"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_, c, h, w) = l.shape().dims4()?;
        fn run<T: WithDType>(x: &[T], c: usize, hw: usize) -> Vec<T> {
            let mut out = vec![T::zero(); c];
            for (i, plane) in x.chunks(hw).enumerate() {
                out[i % c] += plane.iter().fold(T::zero(), |a, &v| a + v);
            }
            out
        }
        let out = match s {
            CpuStorage::F32(x) => CpuStorage::F32(run(slice(x, l, "conv2d backward")?, c, h * w)),
            CpuStorage::F64(x) => CpuStorage::F64(run(slice(x, l, "conv2d backward")?, c, h * w)),
            x => candle_core::bail!("conv2d backward needs f32/f64, got {:?}", x.dtype()),
        };
        Ok((out, Shape::from(c)))
    }
}

/// Cross-correlation of `x: (N, C, H, W)` with `weight: (O, C, k, k)`, zero padding `pad`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let (o, ci, k, k2) = weight.dims4()?;
    if ci != c || k != k2 || stride == 0 {
        return Err(Error::Shape(format!(
            "conv2d: input {:?} with kernel {:?}, stride {stride}",
            x.dims(),
            weight.dims()
        )));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::Shape(format!(
            "conv2d: {h}x{w} input with padding {pad} is smaller than a {k}x{k} kernel"
        )));
    }
    let bias = match bias {
        Some(b) if b.dims() == [o] => b.contiguous()?,
        Some(b) => return Err(Error::Shape(format!("conv2d: bias {:?} for {o} output channels", b.dims()))),
        None => Tensor::zeros(o, weight.dtype(), weight.device())?,
    };
    let g = Window { c, h, w, k, stride, pad };
    Ok(x.contiguous()?.apply_op3(&weight.contiguous()?, &bias, Conv(g))?)
}

/// Kernel-tap lookup for [`conv_transpose2d_x2`]: for output parity `a` and input
/// offset `d - 1`, the 4×4 kernel row that connects them.
fn tap(a: usize, d: usize) -> Option<usize> {
    match (a, d) {
        (0, 0) => Some(3),
        (0, 1) => Some(1),
        (1, 1) => Some(2),
        (1, 2) => Some(0),
        _ => None,
    }
}

/// Transposed convolution with kernel 4, stride 2, padding 1, for `weight: (C_in, C_out, 4, 4)`.
///
/// Each of the four output phases is a 3×3 correlation of the input with a subset of the
/// kernel taps, so the whole op is one 3×3 convolution to `4·C_out` channels followed by
/// a pixel shuffle.
pub fn conv_transpose2d_x2(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, _, h, w) = x.dims4()?;
    let (ci, co, k, k2) = weight.dims4()?;
    if (k, k2) != (4, 4) {
        return Err(Error::Shape(format!("conv_transpose2d_x2 needs a 4x4 kernel, got {:?}", weight.dims())));
    }
    let flat = weight.permute((1, 2, 3, 0))?.reshape((co, 16, ci))?;
    let flat = Tensor::cat(&[&flat, &flat.narrow(1, 0, 1)?.zeros_like()?], 1)?;
    let mut idx = Vec::with_capacity(36);
    for a in 0..2 {
        for b in 0..2 {
            for dy in 0..3 {
                for dx in 0..3 {
                    idx.push(match (tap(a, dy), tap(b, dx)) {
                        (Some(ky), Some(kx)) => (ky * 4 + kx) as u32,
                        _ => 16,
                    });
                }
            }
        }
    }
    let idx = Tensor::new(idx, weight.device())?;
    let k3 = flat
        .index_select(&idx, 1)?
        .reshape((co * 4, 3, 3, ci))?
        .permute((0, 3, 1, 2))?
        .contiguous()?;
    let y = conv2d(x, &k3, None, 1, 1)?;
    let y = y
        .reshape((n, co, 2, 2, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((n, co, 2 * h, 2 * w))?;
    match bias {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, co, 1, 1))?)?),
        None => Ok(y),
    }
}

/// 2-D convolution layer with square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        Self::forward(self, x).map_err(candle_core::Error::wrap)
    }
}

/// Exact ×2 upsampling transposed convolution (kernel 4, stride 2, padding 1).
#[derive(Debug, Clone)]
pub struct ConvTranspose2dX2 {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl ConvTranspose2dX2 {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv_transpose2d_x2(x, &self.weight, self.bias.as_ref())
    }
}

impl Module for ConvTranspose2dX2 {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        Self::forward(self, x).map_err(candle_core::Error::wrap)
    }
}
