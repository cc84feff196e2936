//! Sequential model container with residual blocks.
//!
//! Parameters are addressed by a stable traversal order: layers in order,
//! residual branches recursively, and within a layer the order listed on
//! [`Layer::params`]. Backward passes return gradients in that same order,
//! so optimizer state can be kept as a flat `Vec<Tensor>`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::batchnorm::{BatchNorm2d, BatchNormCache};
use crate::layers::conv::{conv2d_backward, conv2d_forward, ConvFilterParams};
use crate::layers::linear::{linear_backward, linear_forward, LinearParams};
use crate::layers::noise::{noise_backward, noise_forward, NoiseGranularity};
use crate::layers::pool::{gap_backward, gap_forward};
use crate::layers::{relu_backward, relu_forward};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

pub use crate::layers::Mode;

/// What a trainable tensor is, which decides how the update pipelines treat it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Conv direction tensor `V`.
    ConvDirection {
        czm_eligible: bool,
    },
    /// Conv per-filter log-scale `g`.
    ConvLogScale,
    ConvBias,
    LinearWeight,
    LinearBias,
    BnScale,
    BnShift,
}

#[derive(Debug)]
pub struct ParamRef<'a> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: &'a Tensor,
}

#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: &'a mut Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub amplitude: f64,
    pub granularity: NoiseGranularity,
}

impl NoiseSpec {
    pub const OFF: NoiseSpec = NoiseSpec { amplitude: 0.0, granularity: NoiseGranularity::Element };
}

/// Shortcut path of a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortcut {
    Identity,
    /// Spatial subsampling by `stride` followed by zero-filled extra channels
    /// up to `out_channels` (parameter-free projection).
    PadIdentity {
        stride: usize,
        out_channels: usize,
    },
}

/// `y = shortcut(x) + branch(noise(x))`. The noise sits at the branch
/// input; the shortcut sees the clean input.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub noise: NoiseSpec,
    pub branch: Vec<Layer>,
    pub shortcut: Shortcut,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvFilterParams),
    Relu,
    Noise(NoiseSpec),
    BatchNorm(BatchNorm2d),
    Residual(ResidualBlock),
    GlobalAvgPool,
    Linear(LinearParams),
}

/// Per-layer state saved by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Cache {
    Input(Tensor),
    Noise(Option<Tensor>),
    BatchNorm(Option<BatchNormCache>),
    Residual { in_shape: Vec<usize>, mask: Option<Tensor>, branch: Vec<Cache> },
    Shape(Vec<usize>),
}

impl Shortcut {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match *self {
            Shortcut::Identity => Ok(x.clone()),
            Shortcut::PadIdentity { stride, out_channels } => {
                let [n, c, h, w] = nchw(x.shape())?;
                if out_channels < c || stride == 0 {
                    return Err(Error::Invalid(format!(
                        "padded shortcut cannot map {c} channels to {out_channels} with stride {stride}"
                    )));
                }
                let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
                let mut out = vec![0.0; n * out_channels * oh * ow];
                for b in 0..n {
                    for ch in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                out[((b * out_channels + ch) * oh + i) * ow + j] =
                                    x.data()[((b * c + ch) * h + i * stride) * w + j * stride];
                            }
                        }
                    }
                }
                Tensor::new(&[n, out_channels, oh, ow], out)
            }
        }
    }

    fn backward(&self, in_shape: &[usize], dy: &Tensor, dx: &mut Tensor) -> Result<()> {
        match *self {
            Shortcut::Identity => dx.axpy(1.0, dy),
            Shortcut::PadIdentity { stride, out_channels } => {
                let [n, c, h, w] = nchw(in_shape)?;
                let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
                let d = dx.data_mut();
                for b in 0..n {
                    for ch in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                d[((b * c + ch) * h + i * stride) * w + j * stride] +=
                                    dy.data()[((b * out_channels + ch) * oh + i) * ow + j];
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

fn nchw(shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::InvalidShape { shape: shape.to_vec(), reason: "expected [N, C, H, W]".into() }),
    }
}

fn forward_seq<R: RandomSource + ?Sized>(
    layers: &[Layer],
    x: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Vec<Cache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for layer in layers {
        let (y, c) = layer.forward(&h, mode, rng)?;
        caches.push(c);
        h = y;
    }
    Ok((h, caches))
}

fn backward_seq(layers: &[Layer], caches: &[Cache], dy: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    if caches.len() != layers.len() {
        return Err(Error::Invalid("cache does not match the layer stack".into()));
    }
    let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(layers.len());
    let mut d = dy.clone();
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (dx, g) = layer.backward(cache, &d)?;
        per_layer.push(g);
        d = dx;
    }
    Ok((d, per_layer.into_iter().rev().flatten().collect()))
}

impl Layer {
    pub fn forward<R: RandomSource + ?Sized>(&self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Conv(p) => (conv2d_forward(x, p)?, Cache::Input(x.clone())),
            Layer::Relu => (relu_forward(x), Cache::Input(x.clone())),
            Layer::Noise(spec) => {
                let (y, mask) = noise_forward(x, spec.amplitude, mode, spec.granularity, rng)?;
                (y, Cache::Noise(mask))
            }
            Layer::BatchNorm(bn) => match mode {
                Mode::Train => {
                    let (y, c) = bn.forward_train(x)?;
                    (y, Cache::BatchNorm(Some(c)))
                }
                Mode::Eval => (bn.forward_eval(x)?, Cache::BatchNorm(None)),
            },
            Layer::Residual(block) => {
                let (xn, mask) = noise_forward(x, block.noise.amplitude, mode, block.noise.granularity, rng)?;
                let (branch_out, branch) = forward_seq(&block.branch, &xn, mode, rng)?;
                let skip = block.shortcut.forward(x)?;
                if skip.shape() != branch_out.shape() {
                    return Err(Error::shape("residual shortcut vs branch", skip.shape(), branch_out.shape()));
                }
                (skip.add(&branch_out)?, Cache::Residual { in_shape: x.shape().to_vec(), mask, branch })
            }
            Layer::GlobalAvgPool => (gap_forward(x)?, Cache::Shape(x.shape().to_vec())),
            Layer::Linear(p) => (linear_forward(x, p)?, Cache::Input(x.clone())),
        })
    }

    /// Returns the input gradient and this layer's parameter gradients in
    /// [`Layer::params`] order.
    pub fn backward(&self, cache: &Cache, dy: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let bad_cache = || Error::Invalid("cache kind does not match layer".into());
        Ok(match (self, cache) {
            (Layer::Conv(p), Cache::Input(x)) => {
                let g = conv2d_backward(x, p, dy)?;
                let mut grads = vec![g.dv];
                grads.extend(g.dg);
                grads.extend(g.db);
                (g.dx, grads)
            }
            (Layer::Relu, Cache::Input(x)) => (relu_backward(x, dy)?, Vec::new()),
            (Layer::Noise(_), Cache::Noise(mask)) => (noise_backward(dy, mask.as_ref())?, Vec::new()),
            (Layer::BatchNorm(bn), Cache::BatchNorm(c)) => {
                let c =
                    c.as_ref().ok_or_else(|| Error::Invalid("batchnorm backward needs a train-mode forward".into()))?;
                let (dx, dg, db) = bn.backward(c, dy)?;
                (dx, vec![dg, db])
            }
            (Layer::Residual(block), Cache::Residual { in_shape, mask, branch }) => {
                let (d_branch, grads) = backward_seq(&block.branch, branch, dy)?;
                let mut dx = noise_backward(&d_branch, mask.as_ref())?;
                if dx.shape() != &in_shape[..] {
                    return Err(Error::shape("residual backward", dx.shape(), in_shape));
                }
                block.shortcut.backward(in_shape, dy, &mut dx)?;
                (dx, grads)
            }
            (Layer::GlobalAvgPool, Cache::Shape(s)) => (gap_backward(s, dy)?, Vec::new()),
            (Layer::Linear(p), Cache::Input(x)) => {
                let (dx, dw, db) = linear_backward(x, p, dy)?;
                (dx, vec![dw, db])
            }
            _ => return Err(bad_cache()),
        })
    }

    /// Trainable tensors: conv `[v, g?, b?]`, batchnorm `[gamma, beta]`,
    /// linear `[weight, bias]`, residual blocks recurse into their branch.
    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        match self {
            Layer::Conv(p) => {
                out.push(ParamRef {
                    name: format!("{prefix}.v"),
                    role: ParamRole::ConvDirection { czm_eligible: p.czm_eligible },
                    tensor: &p.v,
                });
                if let Some(g) = &p.log_scale {
                    out.push(ParamRef { name: format!("{prefix}.g"), role: ParamRole::ConvLogScale, tensor: g });
                }
                if let Some(b) = &p.bias {
                    out.push(ParamRef { name: format!("{prefix}.b"), role: ParamRole::ConvBias, tensor: b });
                }
            }
            Layer::BatchNorm(bn) => {
                out.push(ParamRef { name: format!("{prefix}.gamma"), role: ParamRole::BnScale, tensor: &bn.gamma });
                out.push(ParamRef { name: format!("{prefix}.beta"), role: ParamRole::BnShift, tensor: &bn.beta });
            }
            Layer::Residual(block) => {
                for (i, l) in block.branch.iter().enumerate() {
                    l.params(&format!("{prefix}.branch.{i}"), out);
                }
            }
            Layer::Linear(p) => {
                out.push(ParamRef {
                    name: format!("{prefix}.weight"),
                    role: ParamRole::LinearWeight,
                    tensor: &p.weight,
                });
                out.push(ParamRef { name: format!("{prefix}.bias"), role: ParamRole::LinearBias, tensor: &p.bias });
            }
            Layer::Relu | Layer::Noise(_) | Layer::GlobalAvgPool => {}
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        match self {
            Layer::Conv(p) => {
                out.push(ParamMut {
                    name: format!("{prefix}.v"),
                    role: ParamRole::ConvDirection { czm_eligible: p.czm_eligible },
                    tensor: &mut p.v,
                });
                if let Some(g) = &mut p.log_scale {
                    out.push(ParamMut { name: format!("{prefix}.g"), role: ParamRole::ConvLogScale, tensor: g });
                }
                if let Some(b) = &mut p.bias {
                    out.push(ParamMut { name: format!("{prefix}.b"), role: ParamRole::ConvBias, tensor: b });
                }
            }
            Layer::BatchNorm(bn) => {
                out.push(ParamMut { name: format!("{prefix}.gamma"), role: ParamRole::BnScale, tensor: &mut bn.gamma });
                out.push(ParamMut { name: format!("{prefix}.beta"), role: ParamRole::BnShift, tensor: &mut bn.beta });
            }
            Layer::Residual(block) => {
                for (i, l) in block.branch.iter_mut().enumerate() {
                    l.params_mut(&format!("{prefix}.branch.{i}"), out);
                }
            }
            Layer::Linear(p) => {
                out.push(ParamMut {
                    name: format!("{prefix}.weight"),
                    role: ParamRole::LinearWeight,
                    tensor: &mut p.weight,
                });
                out.push(ParamMut { name: format!("{prefix}.bias"), role: ParamRole::LinearBias, tensor: &mut p.bias });
            }
            Layer::Relu | Layer::Noise(_) | Layer::GlobalAvgPool => {}
        }
    }

    /// Non-trainable state (batchnorm running statistics).
    pub fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            Layer::BatchNorm(bn) => {
                out.push((format!("{prefix}.running_mean"), &bn.running_mean));
                out.push((format!("{prefix}.running_var"), &bn.running_var));
            }
            Layer::Residual(block) => {
                for (i, l) in block.branch.iter().enumerate() {
                    l.buffers(&format!("{prefix}.branch.{i}"), out);
                }
            }
            _ => {}
        }
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            Layer::BatchNorm(bn) => {
                out.push((format!("{prefix}.running_mean"), &mut bn.running_mean));
                out.push((format!("{prefix}.running_var"), &mut bn.running_var));
            }
            Layer::Residual(block) => {
                for (i, l) in block.branch.iter_mut().enumerate() {
                    l.buffers_mut(&format!("{prefix}.branch.{i}"), out);
                }
            }
            _ => {}
        }
    }

    fn absorb(&mut self, cache: &Cache) {
        match (self, cache) {
            (Layer::BatchNorm(bn), Cache::BatchNorm(Some(c))) => bn.update_running(c),
            (Layer::Residual(block), Cache::Residual { branch, .. }) => {
                for (l, c) in block.branch.iter_mut().zip(branch) {
                    l.absorb(c);
                }
            }
            _ => {}
        }
    }

    fn visit_convs<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a ConvFilterParams)>) {
        match self {
            Layer::Conv(p) => out.push((String::from(prefix), p)),
            Layer::Residual(block) => {
                for (i, l) in block.branch.iter().enumerate() {
                    l.visit_convs(&format!("{prefix}.branch.{i}"), out);
                }
            }
            _ => {}
        }
    }

    fn visit_convs_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut ConvFilterParams)>) {
        match self {
            Layer::Conv(p) => out.push((String::from(prefix), p)),
            Layer::Residual(block) => {
                for (i, l) in block.branch.iter_mut().enumerate() {
                    l.visit_convs_mut(&format!("{prefix}.branch.{i}"), out);
                }
            }
            _ => {}
        }
    }
}

/// Forward state of a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    caches: Vec<Cache>,
}

/// A sequential network mapping `[N, C, H, W]` images to `[N, K]` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    /// Pure forward pass; train-mode batchnorm statistics stay in the cache
    /// until [`Network::absorb_batch_stats`] is called.
    pub fn forward<R: RandomSource + ?Sized>(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, ForwardCache)> {
        let (y, caches) = forward_seq(&self.layers, x, mode, rng)?;
        Ok((y, ForwardCache { caches }))
    }

    /// Eval-mode logits. Draws nothing from any generator.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        struct NoDraws;
        impl RandomSource for NoDraws {
            fn next_u64(&mut self) -> u64 {
                unreachable!("eval mode never samples")
            }
        }
        Ok(self.forward(x, Mode::Eval, &mut NoDraws)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache, dy: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        backward_seq(&self.layers, &cache.caches, dy)
    }

    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        for (l, c) in self.layers.iter_mut().zip(&cache.caches) {
            l.absorb(c);
        }
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("layers.{i}"), &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&format!("layers.{i}"), &mut out);
        }
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.buffers(&format!("layers.{i}"), &mut out);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.buffers_mut(&format!("layers.{i}"), &mut out);
        }
        out
    }

    pub fn convs(&self) -> Vec<(String, &ConvFilterParams)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_convs(&format!("layers.{i}"), &mut out);
        }
        out
    }

    pub fn convs_mut(&mut self) -> Vec<(String, &mut ConvFilterParams)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_convs_mut(&format!("layers.{i}"), &mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    /// Copy of the network with every conv scale folded into its kernel
    /// (`V <- exp(g) * V`, no log-scale). Logits are unchanged up to rounding.
    pub fn folded(&self) -> Network {
        let mut net = self.clone();
        for (_, p) in net.convs_mut() {
            if p.log_scale.is_some() {
                p.v = p.effective_weights();
                p.log_scale = None;
            }
        }
        net
    }
}

impl From<ResidualBlock> for Layer {
    fn from(b: ResidualBlock) -> Self {
        Layer::Residual(b)
    }
}

impl From<ConvFilterParams> for Layer {
    fn from(p: ConvFilterParams) -> Self {
        Layer::Conv(p)
    }
}

impl From<Box<ResidualBlock>> for Layer {
    fn from(b: Box<ResidualBlock>) -> Self {
        Layer::Residual(*b)
    }
}
