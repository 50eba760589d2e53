//! Channel fusion, hourglass, and the conv/norm/activation units they are built from.

use candle_core::Tensor;

use super::conv::{Conv2d, ConvTranspose2dX2};
use super::kernels;
use super::params::ParamPath;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    kernels::leaky_relu(x, LEAKY_SLOPE)
}

pub use kernels::max_pool2;

/// Per-sample, per-channel normalization over the spatial axes (no affine terms).
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    kernels::instance_norm(x, NORM_EPS)
}

/// `conv → instance norm → LeakyReLU`.
#[derive(Debug, Clone)]
pub struct ConvNormAct {
    conv: Conv2d,
}

impl ConvNormAct {
    pub fn new(p: &mut ParamPath<'_>, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: p.conv2d(c_in, c_out, 3, stride)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        leaky_relu(&instance_norm(&self.conv.forward(x)?)?)
    }
}

/// `transposed conv ×2 → instance norm → LeakyReLU`.
#[derive(Debug, Clone)]
pub struct UpNormAct {
    conv: ConvTranspose2dX2,
}

impl UpNormAct {
    pub fn new(p: &mut ParamPath<'_>, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            conv: p.conv_transpose2d_x2(c_in, c_out)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        leaky_relu(&instance_norm(&self.conv.forward(x)?)?)
    }
}

/// Channel fusion: three chained 3×3 convolutions producing C/2, C/4 and C/4 channels,
/// concatenated back to C.
#[derive(Debug, Clone)]
pub struct CfBlock {
    convs: [Conv2d; 3],
    channels: usize,
}

impl CfBlock {
    pub fn new(p: &mut ParamPath<'_>, channels: usize) -> Result<Self> {
        if channels == 0 || channels % 4 != 0 {
            return Err(Error::Config(format!(
                "channel fusion needs a channel count divisible by 4, got {channels}"
            )));
        }
        let [half, quarter] = [channels / 2, channels / 4];
        Ok(Self {
            convs: [
                p.pp("conv1").conv2d(channels, half, 3, 1)?,
                p.pp("conv2").conv2d(half, quarter, 3, 1)?,
                p.pp("conv3").conv2d(quarter, quarter, 3, 1)?,
            ],
            channels,
        })
    }

    pub fn branch_widths(&self) -> [usize; 3] {
        [self.channels / 2, self.channels / 4, self.channels / 4]
    }

    /// The three intermediate feature maps before concatenation.
    pub fn forward_parts(&self, x: &Tensor) -> Result<[Tensor; 3]> {
        let a = leaky_relu(&self.convs[0].forward(x)?)?;
        let b = leaky_relu(&self.convs[1].forward(&a)?)?;
        let c = leaky_relu(&self.convs[2].forward(&b)?)?;
        Ok([a, b, c])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_channels(x, self.channels)?;
        Ok(Tensor::cat(&self.forward_parts(x)?, 1)?)
    }
}

/// Either a channel-fusion block or, for the ablation, a plain channel-preserving conv.
#[derive(Debug, Clone)]
pub enum Fusion {
    ChannelFusion(CfBlock),
    Plain { conv: Conv2d, channels: usize },
}

impl Fusion {
    pub fn new(p: &mut ParamPath<'_>, channels: usize, use_cf: bool) -> Result<Self> {
        if use_cf {
            CfBlock::new(p, channels).map(Fusion::ChannelFusion)
        } else {
            Ok(Fusion::Plain {
                conv: p.pp("conv").conv2d(channels, channels, 3, 1)?,
                channels,
            })
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Fusion::ChannelFusion(cf) => cf.forward(x),
            Fusion::Plain { conv, channels } => {
                check_channels(x, *channels)?;
                leaky_relu(&conv.forward(x)?)
            }
        }
    }
}

fn check_channels(x: &Tensor, expected: usize) -> Result<()> {
    let c = x.dim(1)?;
    if c != expected {
        return Err(Error::Shape(format!("expected {expected} channels, got {c}")));
    }
    Ok(())
}

/// Full-resolution fusion path alongside a twice-pooled fusion path; concatenated to 2C.
#[derive(Debug, Clone)]
pub struct HourglassBlock {
    top: Fusion,
    bottom: [Fusion; 2],
    up_conv: Conv2d,
}

/// Spatial sizes seen by the pooled path, recorded for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HourglassTrace {
    pub pooled: [(usize, usize); 2],
}

impl HourglassBlock {
    pub fn new(p: &mut ParamPath<'_>, channels: usize, use_cf: bool) -> Result<Self> {
        Ok(Self {
            top: Fusion::new(&mut p.pp("top"), channels, use_cf)?,
            bottom: [
                Fusion::new(&mut p.pp("bottom1"), channels, use_cf)?,
                Fusion::new(&mut p.pp("bottom2"), channels, use_cf)?,
            ],
            up_conv: p.pp("up_conv").conv2d(channels, channels, 3, 1)?,
        })
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, HourglassTrace)> {
        let (_, _, h, w) = x.dims4()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "hourglass input {h}x{w} must be divisible by 4"
            )));
        }
        let top = self.top.forward(x)?;
        let p1 = max_pool2(x)?;
        let b1 = self.bottom[0].forward(&p1)?;
        let p2 = max_pool2(&b1)?;
        let b2 = self.bottom[1].forward(&p2)?;
        let up = kernels::upsample_nearest(&b2, h / b2.dim(2)?)?;
        let up = leaky_relu(&self.up_conv.forward(&up)?)?;
        let trace = HourglassTrace {
            pooled: [(p1.dim(2)?, p1.dim(3)?), (p2.dim(2)?, p2.dim(3)?)],
        };
        Ok((Tensor::cat(&[top, up], 1)?, trace))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }
}
