use candle_core::{DType, Device, Tensor};
use super::conv::Conv2d;

use super::blocks::{instance_norm, leaky_relu};
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const DISCRIMINATOR_STAGES: usize = 4;

/// Patch discriminator: four stride-2 convolutions and a 3×3 scoring head.
/// Scores are raw reals (least-squares objective).
pub struct Discriminator {
    params: ParamStore,
    stages: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(base_channels: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        if base_channels == 0 {
            return Err(Error::Config("discriminator needs at least one channel".into()));
        }
        let mut params = ParamStore::new(seed, dtype, device);
        let mut root = params.root();
        let mut stages = Vec::with_capacity(DISCRIMINATOR_STAGES);
        let mut c_in = 3;
        for k in 0..DISCRIMINATOR_STAGES {
            let c_out = base_channels << k;
            stages.push(root.pp(&format!("stage{k}")).conv2d(c_in, c_out, 3, 2)?);
            c_in = c_out;
        }
        let head = root.pp("head").conv2d(c_in, 1, 3, 1)?;
        Ok(Self {
            params,
            stages,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(N, 3, H, W)` in `[0, 1]` to `(N, 1, H/16, W/16)` realness scores.
    pub fn forward(&self, img: &Tensor) -> Result<Tensor> {
        match img.dims() {
            [_, 3, _, _] => {}
            d => return Err(Error::Shape(format!("discriminator expects (N, 3, H, W), got {d:?}"))),
        }
        let mut h = ((img * 2.0)? - 1.0)?;
        for (k, conv) in self.stages.iter().enumerate() {
            h = conv.forward(&h)?;
            if k > 0 {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h)?;
        }
        Ok(self.head.forward(&h)?)
    }
}
