use candle_core::{DType, Device, Tensor};
use super::conv::Conv2d;

use super::blocks::{ConvNormAct, Fusion, HourglassBlock, UpNormAct};
use super::config::{ModelConfig, OutputActivation};
use super::params::{ParamPath, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::CROP_SIZE;

/// Fine-grained feature fusion encoder: stem, strided stages each followed by a fusion
/// block, and an hourglass block at the bottleneck.
#[derive(Debug, Clone)]
pub struct Fgff {
    in_channels: usize,
    stem: ConvNormAct,
    stages: Vec<(ConvNormAct, Fusion)>,
    hourglass: HourglassBlock,
}

impl Fgff {
    pub fn new(p: &mut ParamPath<'_>, in_channels: usize, cfg: &ModelConfig) -> Result<Self> {
        let stem = ConvNormAct::new(&mut p.pp("stem"), in_channels, cfg.base_channels, 1)?;
        let mut stages = Vec::with_capacity(cfg.fgff_stages);
        let mut c_in = cfg.base_channels;
        for (k, &c_out) in cfg.encoder_widths().iter().enumerate() {
            let mut sp = p.pp(&format!("stage{k}"));
            let down = ConvNormAct::new(&mut sp.pp("down"), c_in, c_out, 2)?;
            let fuse = Fusion::new(&mut sp.pp("fuse"), c_out, cfg.use_cf)?;
            stages.push((down, fuse));
            c_in = c_out;
        }
        let hourglass = HourglassBlock::new(&mut p.pp("hourglass"), c_in, cfg.use_cf)?;
        Ok(Self {
            in_channels,
            stem,
            stages,
            hourglass,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "encoder expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let mut h = self.stem.forward(x)?;
        for (down, fuse) in &self.stages {
            h = fuse.forward(&down.forward(&h)?)?;
        }
        self.hourglass.forward(&h)
    }
}

/// Upsamples the fused bottleneck features back to a 3-channel crop in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Decoder {
    in_channels: usize,
    stages: Vec<(UpNormAct, Fusion)>,
    head: Conv2d,
    activation: OutputActivation,
}

impl Decoder {
    pub fn new(p: &mut ParamPath<'_>, cfg: &ModelConfig) -> Result<Self> {
        let in_channels = cfg.decoder_input_channels();
        let mut c_in = in_channels;
        let mut stages = Vec::new();
        for (k, &c_out) in cfg.decoder_widths().iter().enumerate() {
            let mut sp = p.pp(&format!("stage{k}"));
            let up = UpNormAct::new(&mut sp.pp("up"), c_in, c_out)?;
            let fuse = Fusion::new(&mut sp.pp("fuse"), c_out, cfg.use_cf)?;
            stages.push((up, fuse));
            c_in = c_out;
        }
        let head = p.pp("head").conv2d(c_in, 3, 3, 1)?;
        Ok(Self {
            in_channels,
            stages,
            head,
            activation: cfg.output_activation,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `f_r` must be present iff the decoder was built with the reference branch.
    pub fn forward(&self, f_m: &Tensor, f_r: Option<&Tensor>) -> Result<Tensor> {
        let x = match f_r {
            Some(f_r) => {
                let (sm, sr) = (f_m.dims(), f_r.dims());
                if sm.len() != 4 || sr.len() != 4 || sm[0] != sr[0] || sm[2..] != sr[2..] {
                    return Err(Error::Shape(format!(
                        "main features {sm:?} and reference features {sr:?} differ spatially"
                    )));
                }
                Tensor::cat(&[f_m, f_r], 1)?
            }
            None => f_m.clone(),
        };
        let c = x.dim(1)?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "decoder expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let mut h = x;
        for (up, fuse) in &self.stages {
            h = fuse.forward(&up.forward(&h)?)?;
        }
        let logits = self.head.forward(&h)?;
        match self.activation {
            OutputActivation::TanhRescaled => Ok(((logits.tanh()? + 1.0)? * 0.5)?),
        }
    }
}

/// Dual-encoder restoration generator.
pub struct Generator {
    config: ModelConfig,
    params: ParamStore,
    main: Fgff,
    reference: Option<Fgff>,
    decoder: Decoder,
}

impl Generator {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(seed, dtype, device);
        let mut root = params.root();
        let main = Fgff::new(&mut root.pp("fgff_main"), 6, config)?;
        let reference = if config.use_reference_branch {
            Some(Fgff::new(&mut root.pp("fgff_ref"), 3, config)?)
        } else {
            None
        };
        let decoder = Decoder::new(&mut root.pp("decoder"), config)?;
        Ok(Self {
            config: config.clone(),
            params,
            main,
            reference,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Main-branch features from `masked ⊕ contour`.
    pub fn encode_main(&self, masked: &Tensor, contour: &Tensor) -> Result<Tensor> {
        check_crop_batch(masked, "masked")?;
        check_crop_batch(contour, "contour")?;
        self.main.forward(&Tensor::cat(&[masked, contour], 1)?)
    }

    pub fn encode_reference(&self, reference: &Tensor) -> Result<Option<Tensor>> {
        match &self.reference {
            Some(enc) => {
                check_crop_batch(reference, "reference")?;
                enc.forward(reference).map(Some)
            }
            None => Ok(None),
        }
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// All inputs `(N, 3, 96, 96)` in `[0, 1]`; returns `(N, 3, 96, 96)` in `[0, 1]`.
    /// `reference` is ignored when the reference branch is disabled.
    pub fn forward(&self, masked: &Tensor, contour: &Tensor, reference: &Tensor) -> Result<Tensor> {
        let f_m = self.encode_main(masked, contour)?;
        let f_r = self.encode_reference(reference)?;
        self.decoder.forward(&f_m, f_r.as_ref())
    }
}

fn check_crop_batch(t: &Tensor, what: &str) -> Result<()> {
    match t.dims() {
        [_, 3, h, w] if *h == CROP_SIZE && *w == CROP_SIZE => Ok(()),
        d => Err(Error::Shape(format!(
            "{what} must be (N, 3, {CROP_SIZE}, {CROP_SIZE}), got {d:?}"
        ))),
    }
}
