use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient of relu given the forward input `x`. The subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::shape("relu_backward", x.shape(), dy.shape()));
    }
    let data = x.data().iter().zip(dy.data()).map(|(&x, &d)| if x > 0.0 { d } else { 0.0 }).collect();
    Tensor::new(x.shape(), data)
}
