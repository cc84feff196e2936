//! Mean shift rejection.
//!
//! A conv filter whose every spatial slice `V[f, c, :, :]` sums to zero
//! maps a per-channel constant offset of its input to zero, so mean shift
//! created upstream cannot propagate through it. The tools here put the
//! kernels on that zero-mean subspace and keep them there:
//!
//! * [`czmi_init`]: uniform sample, remove each slice's spatial mean, scale
//!   each filter to unit Euclidean norm.
//! * [`czmg_transform`]: after backprop, subtract `z` times each slice's
//!   spatial mean from the kernel gradient.
//! * [`luma_loss_and_grad`]: `lambda * (||V_f|| - 1)^2` per filter, pulling
//!   magnitudes toward one instead of toward zero.
//!
//! Closure under `z = 1`: the transformed gradient has zero slice means, the
//! LUMA gradient is parallel to `V` and therefore zero-mean whenever `V` is,
//! and a momentum buffer is a linear combination of such gradients. Every
//! update is then zero-mean and a kernel that starts on the subspace stays on
//! it, up to floating-point round-off.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::conv::ConvFilterParams;
use crate::network::Network;
use crate::rng::RandomSource;
use crate::tensor::{l2_norm, Tensor};

/// Hyperparameters of the method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsrConfig {
    /// Fraction `z` of the slice-mean gradient removed each step.
    pub zmg: f64,
    /// LUMA weight `lambda`.
    pub luma_weight: f64,
    /// Initial per-filter scale `exp(g)`.
    pub init_scale: f64,
    pub noise_amplitude: f64,
    /// Apply the zero-mean machinery to the network's first conv as well.
    pub first_layer_czm: bool,
}

impl Default for MsrConfig {
    fn default() -> Self {
        MsrConfig { zmg: 0.85, luma_weight: 5e-4, init_scale: 0.8, noise_amplitude: 0.1, first_layer_czm: false }
    }
}

impl MsrConfig {
    pub fn validate(&self) -> Result<()> {
        check_zmg(self.zmg)?;
        if !(self.luma_weight >= 0.0 && self.luma_weight.is_finite()) {
            return Err(Error::OutOfRange { name: "luma_weight", value: self.luma_weight, expected: "[0, inf)" });
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::OutOfRange { name: "init_scale", value: self.init_scale, expected: "(0, inf)" });
        }
        crate::layers::noise::check_amplitude(self.noise_amplitude)
    }

    /// `g` such that `exp(g) = init_scale`.
    pub fn init_log_scale(&self) -> f64 {
        libm::log(self.init_scale)
    }
}

fn check_zmg(z: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::OutOfRange { name: "zmg", value: z, expected: "[0, 1]" });
    }
    Ok(())
}

fn spatial(t: &Tensor) -> Result<usize> {
    let r = t.rank();
    if r < 2 {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "needs two trailing spatial dimensions".into(),
        });
    }
    Ok(t.shape()[r - 2] * t.shape()[r - 1])
}

/// Spatial mean of every trailing 2D slice, in slice order.
pub fn slice_means(t: &Tensor) -> Result<Vec<f64>> {
    let s = spatial(t)?;
    Ok(t.data().chunks(s).map(|c| c.iter().sum::<f64>() / s as f64).collect())
}

pub fn max_abs_slice_mean(t: &Tensor) -> Result<f64> {
    Ok(slice_means(t)?.into_iter().fold(0.0, |m, v| m.max(v.abs())))
}

fn subtract_slice_means(t: &Tensor, factor: f64) -> Result<Tensor> {
    let s = spatial(t)?;
    let mut out = t.clone();
    for slice in out.data_mut().chunks_mut(s) {
        let m = slice.iter().sum::<f64>() / s as f64 * factor;
        for v in slice {
            *v -= m;
        }
    }
    Ok(out)
}

/// Removes the spatial mean from every trailing 2D slice.
pub fn czm_project(t: &Tensor) -> Result<Tensor> {
    subtract_slice_means(t, 1.0)
}

/// `grad - z * spatial_mean(grad)` per slice; the new slice mean is
/// `(1 - z)` times the old one.
pub fn czmg_transform(grad: &Tensor, z: f64) -> Result<Tensor> {
    check_zmg(z)?;
    subtract_slice_means(grad, z)
}

fn normalize_filters(mut t: Tensor) -> Result<Tensor> {
    let f = t.shape()[0];
    let len = t.len() / f;
    for (i, filter) in t.data_mut().chunks_mut(len).enumerate() {
        let n = l2_norm(filter);
        if n < 1e-12 {
            return Err(Error::DegenerateFilter { filter: i, norm: n });
        }
        for v in filter {
            *v /= n;
        }
    }
    Ok(t)
}

fn check_filter_shape(shape: &[usize]) -> Result<()> {
    if shape.len() != 4 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "kernel shape must be [F, C, Kh, Kw]".into(),
        });
    }
    Ok(())
}

/// Channel-wise zero-mean initialization: `X ~ U(-1, 1)`, slice means
/// removed, each filter scaled to unit norm. Samples are drawn in row-major
/// order.
pub fn czmi_init<R: RandomSource + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    check_filter_shape(shape)?;
    if shape[2] * shape[3] <= 1 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "zero-mean initialization needs a spatial extent above 1x1".into(),
        });
    }
    let x = Tensor::uniform(rng, shape, -1.0, 1.0)?;
    normalize_filters(czm_project(&x)?)
}

/// Unit-norm uniform initialization without the zero-mean projection, used
/// for pointwise kernels and the first layer.
pub fn unit_uniform_init<R: RandomSource + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    check_filter_shape(shape)?;
    normalize_filters(Tensor::uniform(rng, shape, -1.0, 1.0)?)
}

/// LUMA for one filter: `lambda * (||v|| - 1)^2` and its gradient
/// `2 lambda (||v|| - 1) v / ||v||`.
pub fn luma_filter(v: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let n = l2_norm(v);
    if n < 1e-8 {
        return Err(Error::DegenerateFilter { filter: 0, norm: n });
    }
    let d = n - 1.0;
    let k = 2.0 * lambda * d / n;
    Ok((lambda * d * d, v.iter().map(|x| k * x).collect()))
}

/// LUMA summed over the filters of `v` (leading axis).
pub fn luma_loss_and_grad(v: &Tensor, lambda: f64) -> Result<(f64, Tensor)> {
    if v.rank() == 0 {
        return Err(Error::InvalidShape { shape: Vec::new(), reason: "empty kernel".into() });
    }
    let f = v.shape()[0];
    let len = v.len() / f;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(v.len());
    for (i, filter) in v.data().chunks(len).enumerate() {
        let (l, g) = luma_filter(filter, lambda).map_err(|e| match e {
            Error::DegenerateFilter { norm, .. } => Error::DegenerateFilter { filter: i, norm },
            e => e,
        })?;
        loss += l;
        grad.extend(g);
    }
    Ok((loss, Tensor::new(v.shape(), grad)?))
}

/// Learning rate relative to the filter magnitude, `lr / m^2`.
pub fn effective_lr(lr: f64, magnitude: f64) -> Result<f64> {
    if !(magnitude > 0.0) {
        return Err(Error::OutOfRange { name: "filter magnitude", value: magnitude, expected: "(0, inf)" });
    }
    Ok(lr / (magnitude * magnitude))
}

/// The kernel a plain convolution would use: `exp(g[f]) * V[f]`.
pub fn export_inference_weights(p: &ConvFilterParams) -> Tensor {
    p.effective_weights()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDiagnostics {
    pub v_norm: f64,
    pub scale: f64,
    pub w_norm: f64,
    /// `lr / ||W||^2`; infinite for a zero filter.
    pub effective_lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiagnostics {
    pub name: String,
    pub shape: Vec<usize>,
    pub czm_eligible: bool,
    pub max_abs_slice_mean: f64,
    pub filters: Vec<FilterDiagnostics>,
}

/// Mean-shift and magnitude report over every conv layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftDiagnostics {
    pub lr: f64,
    pub layers: Vec<LayerDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

fn summarize(values: impl Iterator<Item = f64>) -> Summary {
    let (mut n, mut sum, mut min, mut max) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    if n == 0 {
        return Summary { mean: 0.0, min: 0.0, max: 0.0 };
    }
    Summary { mean: sum / n as f64, min, max }
}

impl ShiftDiagnostics {
    /// Largest slice-mean magnitude over zero-mean-eligible layers.
    pub fn max_slice_mean(&self) -> f64 {
        self.layers.iter().filter(|l| l.czm_eligible).fold(0.0, |m, l| m.max(l.max_abs_slice_mean))
    }

    pub fn filters(&self) -> impl Iterator<Item = &FilterDiagnostics> {
        self.layers.iter().flat_map(|l| l.filters.iter())
    }

    pub fn w_norms(&self) -> Summary {
        summarize(self.filters().map(|f| f.w_norm))
    }

    pub fn v_norms(&self) -> Summary {
        summarize(self.filters().map(|f| f.v_norm))
    }

    pub fn effective_lrs(&self) -> Summary {
        summarize(self.filters().map(|f| f.effective_lr))
    }

    /// Filters whose folded magnitude fell below `threshold`.
    pub fn deflated(&self, threshold: f64) -> usize {
        self.filters().filter(|f| f.w_norm < threshold).count()
    }
}

pub fn shift_diagnostics(net: &Network, lr: f64) -> ShiftDiagnostics {
    let layers = net
        .convs()
        .into_iter()
        .map(|(name, p)| {
            let len = p.filter_len();
            let filters =
                p.v.data()
                    .chunks(len)
                    .zip(p.scales())
                    .map(|(v, scale)| {
                        let v_norm = l2_norm(v);
                        let w_norm = scale * v_norm;
                        FilterDiagnostics {
                            v_norm,
                            scale,
                            w_norm,
                            effective_lr: effective_lr(lr, w_norm).unwrap_or(f64::INFINITY),
                        }
                    })
                    .collect();
            LayerDiagnostics {
                name,
                shape: p.v.shape().to_vec(),
                czm_eligible: p.czm_eligible,
                // rank-4 kernels always have spatial axes
                max_abs_slice_mean: max_abs_slice_mean(&p.v).unwrap_or(0.0),
                filters,
            }
        })
        .collect();
    ShiftDiagnostics { lr, layers }
}
