//! 2D convolution with an exponentiated per-filter scale.
//!
//! The effective kernel of filter `f` is `W[f] = exp(g[f]) * V[f]`. The
//! operation is cross-correlation (the kernel is not flipped) with zero
//! padding. Output sizes follow the floor convention
//! `(H + 2 * pad - Kh) / stride + 1`.
//!
//! Zero padding breaks exact mean-shift rejection at the borders, because a
//! constant input offset is not constant over a window that overlaps the
//! padding. Interior outputs of a kernel with zero-mean spatial slices are
//! unaffected by per-channel offsets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilterParams {
    /// Direction weights `[F, C, Kh, Kw]`.
    pub v: Tensor,
    /// Per-filter log-scale `g`, shape `[F]`. `None` means a plain
    /// convolution (scale fixed at 1, no trainable scale).
    pub log_scale: Option<Tensor>,
    /// Optional per-filter bias, shape `[F]`.
    pub bias: Option<Tensor>,
    /// Whether the zero-mean machinery applies: spatial kernel and not the
    /// first layer of the network.
    pub czm_eligible: bool,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dv: Tensor,
    pub dg: Option<Tensor>,
    pub db: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

impl ConvFilterParams {
    /// Plain convolution parameters with no scale and no bias.
    pub fn plain(v: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let p = ConvFilterParams { v, log_scale: None, bias: None, czm_eligible: false, stride, padding };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.rank() != 4 {
            return Err(Error::InvalidShape {
                shape: self.v.shape().to_vec(),
                reason: "conv weights must be [F, C, Kh, Kw]".into(),
            });
        }
        if self.stride == 0 {
            return Err(Error::Invalid("conv stride must be at least 1".into()));
        }
        let f = self.filters();
        for (name, t) in [("log_scale", &self.log_scale), ("bias", &self.bias)] {
            if let Some(t) = t {
                if t.shape() != [f] {
                    return Err(Error::ShapeMismatch { op: name, left: t.shape().to_vec(), right: vec![f] });
                }
            }
        }
        Ok(())
    }

    pub fn filters(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.v.shape()[2], self.v.shape()[3])
    }

    /// Elements per filter, `C * Kh * Kw`.
    pub fn filter_len(&self) -> usize {
        self.v.len() / self.filters()
    }

    /// `exp(g[f])` per filter (all ones without a log-scale).
    pub fn scales(&self) -> Vec<f64> {
        match &self.log_scale {
            Some(g) => g.data().iter().map(|&g| libm::exp(g)).collect(),
            None => vec![1.0; self.filters()],
        }
    }

    /// The folded kernel `exp(g[f]) * V[f]`.
    pub fn effective_weights(&self) -> Tensor {
        let mut w = self.v.clone();
        let len = self.filter_len();
        for (chunk, s) in w.data_mut().chunks_mut(len).zip(self.scales()) {
            for v in chunk {
                *v *= s;
            }
        }
        w
    }

    pub fn geometry(&self, x_shape: &[usize]) -> Result<ConvGeometry> {
        self.validate()?;
        if x_shape.len() != 4 {
            return Err(Error::InvalidShape {
                shape: x_shape.to_vec(),
                reason: "conv input must be [N, C, H, W]".into(),
            });
        }
        let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        if c != self.in_channels() {
            return Err(Error::shape("conv2d channels", x_shape, self.v.shape()));
        }
        let (kh, kw) = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::shape("conv2d kernel larger than padded input", x_shape, self.v.shape()));
        }
        Ok(ConvGeometry {
            n,
            c,
            h,
            w,
            f: self.filters(),
            kh,
            kw,
            oh: (ph - kh) / self.stride + 1,
            ow: (pw - kw) / self.stride + 1,
            stride: self.stride,
            pad: self.padding,
        })
    }
}

/// Unfolds one image `[C, H, W]` into columns `[C*Kh*Kw, OH*OW]`.
fn im2col(x: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let out = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oi * g.ow..(oi + 1) * g.ow];
                    if ii < 0 || ii >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, d) in dst.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *d = if jj < 0 || jj >= g.w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

/// Scatters columns back onto an image, accumulating overlaps.
fn col2im(cols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Pre-activation `W * x + b` with `W = exp(g) * V`.
pub fn conv2d_forward(x: &Tensor, p: &ConvFilterParams) -> Result<Tensor> {
    let g = p.geometry(x.shape())?;
    let weights = p.effective_weights();
    let (patch, positions) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * positions;
    let mut out = vec![0.0; g.n * out_len];
    let mut cols = vec![0.0; patch * positions];
    for n in 0..g.n {
        im2col(&x.data()[n * in_len..(n + 1) * in_len], &g, &mut cols);
        let y = &mut out[n * out_len..(n + 1) * out_len];
        gemm(g.f, patch, positions, 1.0, weights.data(), false, &cols, false, 0.0, y);
        if let Some(b) = &p.bias {
            for (row, &bf) in y.chunks_mut(positions).zip(b.data()) {
                for v in row {
                    *v += bf;
                }
            }
        }
    }
    Tensor::new(&[g.n, g.f, g.oh, g.ow], out)
}

pub fn conv2d_backward(x: &Tensor, p: &ConvFilterParams, dy: &Tensor) -> Result<ConvGrads> {
    let g = p.geometry(x.shape())?;
    let expected = [g.n, g.f, g.oh, g.ow];
    if dy.shape() != expected {
        return Err(Error::shape("conv2d_backward dy", dy.shape(), &expected));
    }
    let weights = p.effective_weights();
    let (patch, positions) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * positions;

    let mut dw = vec![0.0; g.f * patch];
    let mut dx = vec![0.0; x.len()];
    let mut cols = vec![0.0; patch * positions];
    let mut dcols = vec![0.0; patch * positions];
    for n in 0..g.n {
        let dy_n = &dy.data()[n * out_len..(n + 1) * out_len];
        im2col(&x.data()[n * in_len..(n + 1) * in_len], &g, &mut cols);
        // dW += dy_n [F, P] * cols^T [P, CKK]
        gemm(g.f, positions, patch, 1.0, dy_n, false, &cols, true, 1.0, &mut dw);
        // dcols = W^T [CKK, F] * dy_n [F, P]
        gemm(patch, g.f, positions, 1.0, weights.data(), true, dy_n, false, 0.0, &mut dcols);
        col2im(&dcols, &g, &mut dx[n * in_len..(n + 1) * in_len]);
    }

    let scales = p.scales();
    let mut dv = dw.clone();
    for (chunk, &s) in dv.chunks_mut(patch).zip(&scales) {
        for v in chunk {
            *v *= s;
        }
    }
    let dg = match &p.log_scale {
        Some(_) => {
            let dg: Vec<f64> = dw
                .chunks(patch)
                .zip(weights.data().chunks(patch))
                .map(|(a, b)| a.iter().zip(b).map(|(a, b)| a * b).sum())
                .collect();
            Some(Tensor::new(&[g.f], dg)?)
        }
        None => None,
    };
    let db = match &p.bias {
        Some(_) => {
            let mut db = vec![0.0; g.f];
            for n in 0..g.n {
                for (f, row) in dy.data()[n * out_len..(n + 1) * out_len].chunks(positions).enumerate() {
                    db[f] += row.iter().sum::<f64>();
                }
            }
            Some(Tensor::new(&[g.f], db)?)
        }
        None => None,
    };
    Ok(ConvGrads { dx: Tensor::new(x.shape(), dx)?, dv: Tensor::new(p.v.shape(), dv)?, dg, db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, DEFAULT_STEP};
    use crate::rng::{Prng, RandomSource};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    /// Direct-loop cross-correlation used as an independent reference.
    fn naive_conv(x: &Tensor, p: &ConvFilterParams) -> Tensor {
        let g = p.geometry(x.shape()).unwrap();
        let w = p.effective_weights();
        let mut out = Tensor::zeros(&[g.n, g.f, g.oh, g.ow]).unwrap();
        for n in 0..g.n {
            for f in 0..g.f {
                for oi in 0..g.oh {
                    for oj in 0..g.ow {
                        let mut acc = p.bias.as_ref().map_or(0.0, |b| b.data()[f]);
                        for c in 0..g.c {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                                    let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                                    if ii < 0 || jj < 0 || ii >= g.h as isize || jj >= g.w as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((n * g.c + c) * g.h + ii as usize) * g.w + jj as usize];
                                    let wv = w.data()[((f * g.c + c) * g.kh + ki) * g.kw + kj];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((n * g.f + f) * g.oh + oi) * g.ow + oj] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_params(rng: &mut Prng, f: usize, c: usize, k: usize, stride: usize, pad: usize) -> ConvFilterParams {
        ConvFilterParams {
            v: Tensor::uniform(rng, &[f, c, k, k], -1.0, 1.0).unwrap(),
            log_scale: Some(Tensor::uniform(rng, &[f], -0.5, 0.5).unwrap()),
            bias: Some(Tensor::uniform(rng, &[f], -0.5, 0.5).unwrap()),
            czm_eligible: true,
            stride,
            padding: pad,
        }
    }

    #[test]
    fn pointwise_scaling_example() {
        let mut p = ConvFilterParams::plain(t(&[1, 1, 1, 1], &[1.0]), 1, 0).unwrap();
        p.log_scale = Some(t(&[1], &[libm::log(2.0)]));
        let y = conv2d_forward(&t(&[1, 1, 2, 2], &[1., 2., 3., 4.]), &p).unwrap();
        for (a, b) in y.data().iter().zip([2., 4., 6., 8.]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_zero_mean_kernel_rejected() {
        let mut rng = Prng::new(4);
        let mut v = Tensor::uniform(&mut rng, &[1, 1, 3, 3], -1.0, 1.0).unwrap();
        let mean = v.sum() / 9.0;
        v = v.map(|a| a - mean);
        let mut p = ConvFilterParams::plain(v, 1, 0).unwrap();
        p.bias = Some(t(&[1], &[0.0]));
        let y = conv2d_forward(&Tensor::full(&[1, 1, 5, 5], 5.0).unwrap(), &p).unwrap();
        assert!(y.max_abs() < 1e-12);
    }

    #[test]
    fn hand_cross_correlation() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let mut p = ConvFilterParams::plain(t(&[1, 1, 2, 2], &[1., 0., 0., 1.]), 1, 0).unwrap();
        p.log_scale = Some(t(&[1], &[0.0]));
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[6., 8., 12., 14.]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = Prng::new(8);
        for &(stride, pad, k) in &[(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 1), (1, 2, 5)] {
            let p = random_params(&mut rng, 3, 2, k, stride, pad);
            let x = Tensor::uniform(&mut rng, &[2, 2, 7, 6], -1.0, 1.0).unwrap();
            let fast = conv2d_forward(&x, &p).unwrap();
            let slow = naive_conv(&x, &p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let p = ConvFilterParams::plain(Tensor::zeros(&[2, 3, 3, 3]).unwrap(), 1, 0).unwrap();
        assert!(matches!(conv2d_forward(&Tensor::zeros(&[1, 2, 5, 5]).unwrap(), &p), Err(Error::ShapeMismatch { .. })));
        assert!(conv2d_forward(&Tensor::zeros(&[1, 3, 2, 2]).unwrap(), &p).is_err());
        let x = Tensor::zeros(&[1, 3, 5, 5]).unwrap();
        assert!(conv2d_backward(&x, &p, &Tensor::zeros(&[1, 2, 4, 4]).unwrap()).is_err());
        assert!(ConvFilterParams::plain(Tensor::zeros(&[2, 3, 3, 3]).unwrap(), 0, 0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Prng::new(2);
        let p = random_params(&mut rng, 2, 2, 3, 1, 1);
        let x = Tensor::uniform(&mut rng, &[2, 2, 4, 4], -1.0, 1.0).unwrap();
        let g = conv2d_backward(&x, &p, &Tensor::zeros(&[2, 2, 4, 4]).unwrap()).unwrap();
        assert_eq!(g.dx.max_abs(), 0.0);
        assert_eq!(g.dv.max_abs(), 0.0);
        assert_eq!(g.dg.unwrap().max_abs(), 0.0);
        assert_eq!(g.db.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn unit_scale_gives_classical_weight_gradient() {
        let mut rng = Prng::new(6);
        let mut p = random_params(&mut rng, 2, 2, 3, 1, 0);
        p.log_scale = Some(Tensor::zeros(&[2]).unwrap());
        let x = Tensor::uniform(&mut rng, &[2, 2, 5, 5], -1.0, 1.0).unwrap();
        let dy = Tensor::uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0).unwrap();
        let scaled = conv2d_backward(&x, &p, &dy).unwrap();
        p.log_scale = None;
        let plain = conv2d_backward(&x, &p, &dy).unwrap();
        assert_eq!(scaled.dv, plain.dv);
        assert!(plain.dg.is_none());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Prng::new(21);
        for trial in 0..10 {
            let (stride, pad) = if trial % 2 == 0 { (1, 0) } else { (2, 1) };
            let p = random_params(&mut rng, 2, 2, 3, stride, pad);
            let x = Tensor::uniform(&mut rng, &[2, 2, 5, 5], -1.0, 1.0).unwrap();
            let y = conv2d_forward(&x, &p).unwrap();
            let r = Tensor::uniform(&mut rng, y.shape(), -1.0, 1.0).unwrap();
            let grads = conv2d_backward(&x, &p, &r).unwrap();
            let loss = |x: &Tensor, p: &ConvFilterParams| conv2d_forward(x, p).unwrap().dot(&r).unwrap();

            check_gradient(x.data(), grads.dx.data(), DEFAULT_STEP, 1e-5, |d| {
                loss(&Tensor::new(x.shape(), d.to_vec()).unwrap(), &p)
            })
            .unwrap();
            check_gradient(p.v.data(), grads.dv.data(), DEFAULT_STEP, 1e-5, |d| {
                let mut q = p.clone();
                q.v.data_mut().copy_from_slice(d);
                loss(&x, &q)
            })
            .unwrap();
            let g0 = p.log_scale.clone().unwrap();
            check_gradient(g0.data(), grads.dg.as_ref().unwrap().data(), DEFAULT_STEP, 1e-5, |d| {
                let mut q = p.clone();
                q.log_scale = Some(Tensor::new(&[2], d.to_vec()).unwrap());
                loss(&x, &q)
            })
            .unwrap();
            let b0 = p.bias.clone().unwrap();
            check_gradient(b0.data(), grads.db.as_ref().unwrap().data(), DEFAULT_STEP, 1e-5, |d| {
                let mut q = p.clone();
                q.bias = Some(Tensor::new(&[2], d.to_vec()).unwrap());
                loss(&x, &q)
            })
            .unwrap();
            let _ = rng.next_u64();
        }
    }

    #[test]
    fn linear_in_input_without_bias() {
        let mut rng = Prng::new(13);
        let mut p = random_params(&mut rng, 3, 2, 3, 1, 1);
        p.bias = None;
        let x = Tensor::uniform(&mut rng, &[1, 2, 4, 4], -1.0, 1.0).unwrap();
        let a = conv2d_forward(&x.scale(-2.5), &p).unwrap();
        let b = conv2d_forward(&x, &p).unwrap().scale(-2.5);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
