//! SGD with heavy-ball momentum and the two update pipelines.
//!
//! Momentum convention: `v <- mu * v + grad`, `param <- param - lr * v`
//! (no dampening, no Nesterov, learning rate outside the buffer). Buffers
//! are never reset, including at learning-rate boundaries.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::msr::{czmg_transform, luma_loss_and_grad, MsrConfig};
use crate::network::{Network, ParamRole};
use crate::tensor::Tensor;

/// Piecewise-constant schedule: `base` times every multiplier whose epoch
/// boundary is `<=` the current epoch (closed on the left).
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    base: f64,
    boundaries: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(base: f64, boundaries: Vec<(usize, f64)>) -> Result<Self> {
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::OutOfRange { name: "learning rate", value: base, expected: "(0, inf)" });
        }
        for w in boundaries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Invalid("schedule boundaries must be strictly increasing".into()));
            }
        }
        if let Some(&(_, m)) = boundaries.iter().find(|(_, m)| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::OutOfRange { name: "schedule multiplier", value: m, expected: "(0, inf)" });
        }
        Ok(LrSchedule { base, boundaries })
    }

    pub fn constant(base: f64) -> Result<Self> {
        Self::new(base, Vec::new())
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn boundaries(&self) -> &[(usize, f64)] {
        &self.boundaries
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.boundaries.iter().take_while(|(b, _)| *b <= epoch).fold(self.base, |lr, (_, m)| lr * m)
    }
}

/// Momentum buffers (one per trainable tensor, in network parameter order)
/// and progress counters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub momentum: f64,
    pub velocity: Vec<Tensor>,
    pub step: u64,
    pub epoch: usize,
}

impl OptimState {
    pub fn new(net: &Network, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::OutOfRange { name: "momentum", value: momentum, expected: "[0, 1)" });
        }
        Ok(OptimState {
            momentum,
            velocity: net.params().iter().map(|p| p.tensor.zeros_like()).collect(),
            step: 0,
            epoch: 0,
        })
    }
}

/// One heavy-ball step on a single tensor.
pub fn sgd_momentum_step(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, mu: f64, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::shape("sgd_momentum_step", param.shape(), grad.shape()));
    }
    for ((w, v), &g) in param.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
        *v = mu * *v + g;
        *w -= lr * *v;
    }
    Ok(())
}

/// Where the zero-mean gradient transform sits relative to momentum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CzmgOrder {
    /// Transform the raw gradient (plus LUMA term) before it enters the
    /// momentum buffer, so the buffer itself stays zero-mean under `z = 1`.
    #[default]
    BeforeMomentum,
    /// Accumulate the raw gradient and transform the buffer when applying it.
    AfterMomentum,
}

fn check_grads(net: &Network, grads: &[Tensor], state: &OptimState) -> Result<()> {
    let params = net.params();
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Invalid(alloc::format!(
            "{} parameters, {} gradients, {} momentum buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.shape() != g.shape() {
            return Err(Error::shape("gradient", g.shape(), p.tensor.shape()));
        }
    }
    Ok(())
}

/// Mean-shift-rejection update. For every conv direction tensor: add the
/// LUMA gradient, apply the zero-mean transform when the layer is eligible,
/// then the momentum step. All other tensors get a plain momentum step with
/// no decay. Returns the total LUMA loss before the update.
pub fn msr_update_pipeline(
    net: &mut Network,
    grads: &[Tensor],
    cfg: &MsrConfig,
    order: CzmgOrder,
    state: &mut OptimState,
    lr: f64,
) -> Result<f64> {
    cfg.validate()?;
    check_grads(net, grads, state)?;
    let mu = state.momentum;
    let mut luma_total = 0.0;
    for ((p, g), v) in net.params_mut().into_iter().zip(grads).zip(&mut state.velocity) {
        match p.role {
            ParamRole::ConvDirection { czm_eligible } => {
                let mut g = g.clone();
                if cfg.luma_weight > 0.0 {
                    let (loss, lg) = luma_loss_and_grad(p.tensor, cfg.luma_weight)?;
                    luma_total += loss;
                    g.axpy(1.0, &lg)?;
                }
                match (czm_eligible, order) {
                    (false, _) => sgd_momentum_step(p.tensor, &g, v, mu, lr)?,
                    (true, CzmgOrder::BeforeMomentum) => {
                        let g = czmg_transform(&g, cfg.zmg)?;
                        sgd_momentum_step(p.tensor, &g, v, mu, lr)?;
                    }
                    (true, CzmgOrder::AfterMomentum) => {
                        for (b, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                            *b = mu * *b + gi;
                        }
                        let step = czmg_transform(v, cfg.zmg)?;
                        p.tensor.axpy(-lr, &step)?;
                    }
                }
            }
            _ => sgd_momentum_step(p.tensor, g, v, mu, lr)?,
        }
    }
    state.step += 1;
    Ok(luma_total)
}

/// Baseline update with coupled L2 decay: `grad + 2 * wd * param` for every
/// trainable tensor, then the momentum step.
pub fn baseline_l2_step(
    net: &mut Network,
    grads: &[Tensor],
    weight_decay: f64,
    state: &mut OptimState,
    lr: f64,
) -> Result<f64> {
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::OutOfRange { name: "weight_decay", value: weight_decay, expected: "[0, inf)" });
    }
    check_grads(net, grads, state)?;
    let mu = state.momentum;
    let mut l2 = 0.0;
    for ((p, g), v) in net.params_mut().into_iter().zip(grads).zip(&mut state.velocity) {
        if weight_decay > 0.0 {
            let mut g = g.clone();
            l2 += weight_decay * p.tensor.dot(p.tensor)?;
            g.axpy(2.0 * weight_decay, p.tensor)?;
            sgd_momentum_step(p.tensor, &g, v, mu, lr)?;
        } else {
            sgd_momentum_step(p.tensor, g, v, mu, lr)?;
        }
    }
    state.step += 1;
    Ok(l2)
}
