use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Fully connected layer, `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        match *x.shape() {
            [n, k] if k == self.in_features() && self.bias.shape() == [self.out_features()] => Ok(n),
            _ => Err(Error::shape("linear", x.shape(), self.weight.shape())),
        }
    }
}

pub fn linear_forward(x: &Tensor, p: &LinearParams) -> Result<Tensor> {
    let n = p.check(x)?;
    let (o, k) = (p.out_features(), p.in_features());
    let mut y = vec![0.0; n * o];
    for row in y.chunks_mut(o) {
        row.copy_from_slice(p.bias.data());
    }
    gemm(n, k, o, 1.0, x.data(), false, p.weight.data(), true, 1.0, &mut y);
    Tensor::new(&[n, o], y)
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward(x: &Tensor, p: &LinearParams, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let n = p.check(x)?;
    let (o, k) = (p.out_features(), p.in_features());
    if dy.shape() != [n, o] {
        return Err(Error::shape("linear_backward", dy.shape(), &[n, o]));
    }
    let mut dx = vec![0.0; n * k];
    gemm(n, o, k, 1.0, dy.data(), false, p.weight.data(), false, 0.0, &mut dx);
    let mut dw = vec![0.0; o * k];
    gemm(o, n, k, 1.0, dy.data(), true, x.data(), false, 0.0, &mut dw);
    let mut db = vec![0.0; o];
    for row in dy.data().chunks(o) {
        for (acc, &d) in db.iter_mut().zip(row) {
            *acc += d;
        }
    }
    Ok((Tensor::new(&[n, k], dx)?, Tensor::new(&[o, k], dw)?, Tensor::new(&[o], db)?))
}
