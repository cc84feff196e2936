//! Batch normalization over `[N, C, H, W]`, kept only for the comparison
//! baseline. Running statistics use an exponential moving average with
//! momentum 0.1 and the unbiased batch variance; `eps = 1e-5`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Saved state of a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Elements per channel, `N * H * W`.
    pub count: usize,
}

fn dims(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, c, h, w] if c == channels => Ok((n, h * w)),
        _ => Err(Error::shape("batchnorm", x.shape(), &[0, channels, 0, 0])),
    }
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Tensor::full(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], 1.0)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let c = self.channels();
        let (n, hw) = dims(x, c)?;
        if n < 2 {
            return Err(Error::Invalid("batch normalization in train mode needs a batch of at least 2".into()));
        }
        let count = n * hw;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, plane) in x.data().chunks(hw).enumerate() {
            mean[i % c] += plane.iter().sum::<f64>();
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        for (i, plane) in x.data().chunks(hw).enumerate() {
            let m = mean[i % c];
            var[i % c] += plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        for v in &mut var {
            *v /= count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let mut x_hat = x.clone();
        let mut y = x.clone();
        for (i, (xh, yy)) in x_hat.data_mut().chunks_mut(hw).zip(y.data_mut().chunks_mut(hw)).enumerate() {
            let ch = i % c;
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for (h, o) in xh.iter_mut().zip(yy.iter_mut()) {
                *h = (*h - mean[ch]) * inv_std[ch];
                *o = g * *h + b;
            }
        }
        Ok((y, BatchNormCache { x_hat, mean, var, inv_std, count }))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        let (_, hw) = dims(x, c)?;
        let mut y = x.clone();
        for (i, plane) in y.data_mut().chunks_mut(hw).enumerate() {
            let ch = i % c;
            let inv = 1.0 / libm::sqrt(self.running_var.data()[ch] + BN_EPS);
            let (m, g, b) = (self.running_mean.data()[ch], self.gamma.data()[ch], self.beta.data()[ch]);
            for v in plane {
                *v = g * (*v - m) * inv + b;
            }
        }
        Ok(y)
    }

    /// Folds a train-mode batch's statistics into the running averages.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let unbias = cache.count as f64 / (cache.count as f64 - 1.0);
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if dy.shape() != cache.x_hat.shape() {
            return Err(Error::shape("batchnorm_backward", dy.shape(), cache.x_hat.shape()));
        }
        let c = self.channels();
        let (_, hw) = dims(dy, c)?;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (i, (d, h)) in dy.data().chunks(hw).zip(cache.x_hat.data().chunks(hw)).enumerate() {
            dbeta[i % c] += d.iter().sum::<f64>();
            dgamma[i % c] += d.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
        let m = cache.count as f64;
        let mut dx = dy.clone();
        for (i, (d, h)) in dx.data_mut().chunks_mut(hw).zip(cache.x_hat.data().chunks(hw)).enumerate() {
            let ch = i % c;
            let k = self.gamma.data()[ch] * cache.inv_std[ch];
            let (mean_dy, mean_dyh) = (dbeta[ch] / m, dgamma[ch] / m);
            for (v, &xh) in d.iter_mut().zip(h) {
                *v = k * (*v - mean_dy - xh * mean_dyh);
            }
        }
        Ok((dx, Tensor::new(&[c], dgamma)?, Tensor::new(&[c], dbeta)?))
    }
}
