//! Named, seed-initialized trainable parameters.
//!
//! candle's CPU RNG cannot be seeded, so parameters are drawn from a ChaCha stream here
//! and wrapped as [`Var`]s. Construction order fixes the draw order, which makes
//! initialization reproducible for a given seed.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{Conv2d, ConvTranspose2dX2};
use crate::error::{Error, Result};

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> ParamPath<'_> {
        ParamPath {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every parameter from `values`; names and shapes must match exactly.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        if values.len() != self.vars.len() {
            return Err(Error::Shape(format!(
                "parameter count mismatch: store has {}, source has {}",
                self.vars.len(),
                values.len()
            )));
        }
        for (name, var) in &self.vars {
            let src = values
                .get(name)
                .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?;
            if src.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter {name}: expected {:?}, got {:?}",
                    var.dims(),
                    src.dims()
                )));
            }
            var.set(&src.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    fn register(&mut self, name: String, values: Vec<f64>, dims: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(handle)
    }

    fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect()
    }
}

/// Hierarchical naming cursor into a [`ParamStore`].
pub struct ParamPath<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl ParamPath<'_> {
    pub fn pp(&mut self, name: &str) -> ParamPath<'_> {
        ParamPath {
            prefix: self.join(name),
            store: self.store,
        }
    }

    fn join(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Weight and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    fn kernel_and_bias(&mut self, w_dims: [usize; 4], fan_in: usize, out: usize) -> Result<(Tensor, Tensor)> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = w_dims.iter().product();
        let w = self.store.uniform(n, bound);
        let w = self.store.register(self.join("weight"), w, &w_dims)?;
        let b = self.store.uniform(out, bound);
        let b = self.store.register(self.join("bias"), b, &[out])?;
        Ok((w, b))
    }

    pub fn conv2d(&mut self, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Result<Conv2d> {
        let (w, b) = self.kernel_and_bias([c_out, c_in, kernel, kernel], c_in * kernel * kernel, c_out)?;
        Ok(Conv2d::new(w, Some(b), stride, kernel / 2))
    }

    /// Exact ×2 upsampling: kernel 4, stride 2, padding 1.
    pub fn conv_transpose2d_x2(&mut self, c_in: usize, c_out: usize) -> Result<ConvTranspose2dX2> {
        let (w, b) = self.kernel_and_bias([c_in, c_out, 4, 4], c_out * 16, c_out)?;
        Ok(ConvTranspose2dX2::new(w, Some(b)))
    }
}
