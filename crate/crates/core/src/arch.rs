//! Named architectures and the per-arm initialization rules.
//!
//! | name            | body                                                        |
//! |-----------------|-------------------------------------------------------------|
//! | `tinycnn`       | conv3x3 16, conv3x3/2 32, conv3x3/2 32, GAP, linear         |
//! | `vggsmall`      | 2x conv3x3 32, 2x conv3x3 64 (/2), 2x conv3x3 128 (/2), GAP, linear |
//! | `resnet-mini-N` | CIFAR ResNet with N blocks per stage (6N+2 layers), widths 16/32/64 |
//! | `resnet110`     | `resnet-mini-18`                                            |
//!
//! ResNet blocks are `conv-[bn]-relu-conv-[bn]` with the parameter-free
//! padded identity shortcut when the width or resolution changes, followed
//! by a relu after the addition. Every conv uses padding `k / 2`.
//!
//! Initialization by arm:
//!
//! * `msr`: spatial convs after the first get [`czmi_init`]; the first conv
//!   and pointwise convs get unit-norm uniform weights without projection;
//!   every conv carries `g = ln(init_scale)`; no normalization layers.
//! * `batchnorm-baseline` and `plain`: He-normal conv weights, no scale
//!   parameter; the baseline adds batch normalization after every conv.
//!
//! Linear heads use `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and zero bias.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::batchnorm::BatchNorm2d;
use crate::layers::conv::ConvFilterParams;
use crate::layers::linear::LinearParams;
use crate::layers::noise::NoiseGranularity;
use crate::msr::{czmi_init, unit_uniform_init, MsrConfig};
use crate::network::{Layer, Network, NoiseSpec, ResidualBlock, Shortcut};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

pub const ARCHITECTURE_NAMES: &str = "tinycnn, vggsmall, resnet-mini, resnet-mini-N, resnet110";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    TinyCnn,
    VggSmall,
    ResNet { blocks_per_stage: usize },
}

impl Architecture {
    pub fn parse(name: &str) -> Result<Self> {
        let unknown = || Error::UnknownArchitecture { name: name.into(), valid: ARCHITECTURE_NAMES };
        Ok(match name {
            "tinycnn" => Architecture::TinyCnn,
            "vggsmall" => Architecture::VggSmall,
            "resnet-mini" => Architecture::ResNet { blocks_per_stage: 1 },
            "resnet110" => Architecture::ResNet { blocks_per_stage: 18 },
            _ => match name.strip_prefix("resnet-mini-").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => Architecture::ResNet { blocks_per_stage: n },
                _ => return Err(unknown()),
            },
        })
    }

    pub fn name(&self) -> alloc::string::String {
        match *self {
            Architecture::TinyCnn => "tinycnn".into(),
            Architecture::VggSmall => "vggsmall".into(),
            Architecture::ResNet { blocks_per_stage: 18 } => "resnet110".into(),
            Architecture::ResNet { blocks_per_stage } => format!("resnet-mini-{blocks_per_stage}"),
        }
    }
}

/// Training arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Msr,
    BatchNormBaseline,
    Plain,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "msr" => Ok(Method::Msr),
            "batchnorm-baseline" | "batchnorm" => Ok(Method::BatchNormBaseline),
            "plain" => Ok(Method::Plain),
            _ => Err(Error::Invalid(format!("unknown method {name:?}; valid: msr, batchnorm-baseline, plain"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Msr => "msr",
            Method::BatchNormBaseline => "batchnorm-baseline",
            Method::Plain => "plain",
        }
    }
}

/// Where noise layers go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoisePlacement {
    /// At the input of every residual branch.
    #[default]
    ResidualInputs,
    /// Before every conv except the first (the only option that adds noise
    /// to architectures without residual blocks).
    ConvInputs,
    None,
}

impl NoisePlacement {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "residual-inputs" => Ok(NoisePlacement::ResidualInputs),
            "conv-inputs" => Ok(NoisePlacement::ConvInputs),
            "none" => Ok(NoisePlacement::None),
            _ => Err(Error::Invalid(format!(
                "unknown noise placement {name:?}; valid: residual-inputs, conv-inputs, none"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoisePlacement::ResidualInputs => "residual-inputs",
            NoisePlacement::ConvInputs => "conv-inputs",
            NoisePlacement::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub method: Method,
    pub msr: MsrConfig,
    pub in_channels: usize,
    pub classes: usize,
    pub noise_placement: NoisePlacement,
    pub noise_granularity: NoiseGranularity,
    /// Conv bias; `None` picks the arm default (off for msr, on otherwise).
    pub conv_bias: Option<bool>,
}

impl ModelOptions {
    pub fn new(method: Method, classes: usize) -> Self {
        ModelOptions {
            method,
            msr: MsrConfig::default(),
            in_channels: 3,
            classes,
            noise_placement: NoisePlacement::default(),
            noise_granularity: NoiseGranularity::Element,
            conv_bias: None,
        }
    }

    fn bias(&self) -> bool {
        self.conv_bias.unwrap_or(self.method != Method::Msr)
    }

    fn noise(&self) -> NoiseSpec {
        NoiseSpec { amplitude: self.msr.noise_amplitude, granularity: self.noise_granularity }
    }
}

struct Builder<'a, R: ?Sized> {
    opts: &'a ModelOptions,
    rng: &'a mut R,
    first: bool,
}

impl<R: RandomSource + ?Sized> Builder<'_, R> {
    /// conv (+ batchnorm on the baseline arm), with conv-input noise when
    /// configured.
    fn conv(&mut self, out: &mut Vec<Layer>, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<()> {
        let first = core::mem::replace(&mut self.first, false);
        let opts = self.opts;
        if !first && opts.noise_placement == NoisePlacement::ConvInputs && opts.msr.noise_amplitude > 0.0 {
            out.push(Layer::Noise(opts.noise()));
        }
        let shape = [c_out, c_in, k, k];
        let bias = if opts.bias() { Some(Tensor::zeros(&[c_out])?) } else { None };
        let params = match opts.method {
            Method::Msr => {
                let czm_eligible = k * k > 1 && (!first || opts.msr.first_layer_czm);
                let v = if czm_eligible { czmi_init(&shape, self.rng)? } else { unit_uniform_init(&shape, self.rng)? };
                ConvFilterParams {
                    v,
                    log_scale: Some(Tensor::full(&[c_out], opts.msr.init_log_scale())?),
                    bias,
                    czm_eligible,
                    stride,
                    padding: k / 2,
                }
            }
            Method::BatchNormBaseline | Method::Plain => {
                let std = libm::sqrt(2.0 / (c_in * k * k) as f64);
                let rng = &mut *self.rng;
                ConvFilterParams {
                    v: Tensor::from_fn(&shape, |_| std * rng.normal())?,
                    log_scale: None,
                    bias,
                    czm_eligible: false,
                    stride,
                    padding: k / 2,
                }
            }
        };
        out.push(Layer::Conv(params));
        if opts.method == Method::BatchNormBaseline {
            out.push(Layer::BatchNorm(BatchNorm2d::new(c_out)?));
        }
        Ok(())
    }

    fn linear(&mut self, c_in: usize, c_out: usize) -> Result<Layer> {
        let bound = 1.0 / libm::sqrt(c_in as f64);
        Ok(Layer::Linear(LinearParams {
            weight: Tensor::uniform(self.rng, &[c_out, c_in], -bound, bound)?,
            bias: Tensor::zeros(&[c_out])?,
        }))
    }

    fn block(&mut self, c_in: usize, c_out: usize, stride: usize) -> Result<Layer> {
        let mut branch = Vec::new();
        self.conv(&mut branch, c_in, c_out, 3, stride)?;
        branch.push(Layer::Relu);
        self.conv(&mut branch, c_out, c_out, 3, 1)?;
        let shortcut = if c_in == c_out && stride == 1 {
            Shortcut::Identity
        } else {
            Shortcut::PadIdentity { stride, out_channels: c_out }
        };
        let noise = if self.opts.noise_placement == NoisePlacement::ResidualInputs {
            self.opts.noise()
        } else {
            NoiseSpec::OFF
        };
        Ok(Layer::Residual(ResidualBlock { noise, branch, shortcut }))
    }
}

pub fn build_model<R: RandomSource + ?Sized>(arch: Architecture, opts: &ModelOptions, rng: &mut R) -> Result<Network> {
    opts.msr.validate()?;
    if opts.classes < 2 || opts.in_channels == 0 {
        return Err(Error::Invalid("a classifier needs at least 2 classes and 1 input channel".into()));
    }
    let mut b = Builder { opts, rng, first: true };
    let mut layers = Vec::new();
    let width = match arch {
        Architecture::TinyCnn => {
            for (c_in, c_out, stride) in [(opts.in_channels, 16, 1), (16, 32, 2), (32, 32, 2)] {
                b.conv(&mut layers, c_in, c_out, 3, stride)?;
                layers.push(Layer::Relu);
            }
            32
        }
        Architecture::VggSmall => {
            let plan = [(opts.in_channels, 32, 1), (32, 32, 1), (32, 64, 2), (64, 64, 1), (64, 128, 2), (128, 128, 1)];
            for (c_in, c_out, stride) in plan {
                b.conv(&mut layers, c_in, c_out, 3, stride)?;
                layers.push(Layer::Relu);
            }
            128
        }
        Architecture::ResNet { blocks_per_stage } => {
            b.conv(&mut layers, opts.in_channels, 16, 3, 1)?;
            layers.push(Layer::Relu);
            let mut c_in = 16;
            for stage in 0..3 {
                let c_out = 16 << stage;
                for i in 0..blocks_per_stage {
                    let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                    layers.push(b.block(c_in, c_out, stride)?);
                    layers.push(Layer::Relu);
                    c_in = c_out;
                }
            }
            64
        }
    };
    layers.push(Layer::GlobalAvgPool);
    layers.push(b.linear(width, opts.classes)?);
    Ok(Network::new(layers))
}

/// Parameter count of a `resnet-mini-N` computed from the stage layout,
/// independent of [`build_model`].
pub fn resnet_param_count(blocks_per_stage: usize, classes: usize, method: Method, conv_bias: bool) -> usize {
    let n = blocks_per_stage;
    let mut convs: Vec<(usize, usize)> = vec![(3, 16)];
    let mut c_in = 16;
    for stage in 0..3 {
        let c_out = 16 << stage;
        for _ in 0..n {
            convs.push((c_in, c_out));
            convs.push((c_out, c_out));
            c_in = c_out;
        }
    }
    let per_filter_extra = match method {
        Method::Msr => 1,
        Method::BatchNormBaseline => 2,
        Method::Plain => 0,
    } + usize::from(conv_bias);
    let conv: usize = convs.iter().map(|&(i, o)| o * i * 9 + o * per_filter_extra).sum();
    conv + 64 * classes + classes
}
