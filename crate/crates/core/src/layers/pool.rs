use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn nchw(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "global average pooling expects [N, C, H, W]".into(),
        }),
    }
}

/// `[N, C, H, W] -> [N, C]`, averaging every spatial position.
pub fn gap_forward(x: &Tensor) -> Result<Tensor> {
    let (n, c, hw) = nchw(x.shape())?;
    let inv = 1.0 / hw as f64;
    let data: Vec<f64> = x.data().chunks(hw).map(|p| p.iter().sum::<f64>() * inv).collect();
    Tensor::new(&[n, c], data)
}

pub fn gap_backward(x_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    let (n, c, hw) = nchw(x_shape)?;
    if dy.shape() != [n, c] {
        return Err(Error::shape("gap_backward", dy.shape(), &[n, c]));
    }
    let inv = 1.0 / hw as f64;
    let data = dy.data().iter().flat_map(|&d| core::iter::repeat(d * inv).take(hw)).collect();
    Tensor::new(x_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, DEFAULT_STEP};
    use crate::rng::Prng;

    #[test]
    fn constant_map_pools_to_constant() {
        let mut x = Tensor::zeros(&[2, 3, 4, 4]).unwrap();
        for (i, chunk) in x.data_mut().chunks_mut(16).enumerate() {
            chunk.fill(i as f64 - 1.5);
        }
        let y = gap_forward(&x).unwrap();
        let expected: Vec<f64> = (0..6).map(|i| i as f64 - 1.5).collect();
        assert_eq!(y.data(), &expected[..]);
    }

    #[test]
    fn gap_gradient() {
        let mut rng = Prng::new(5);
        let x = Tensor::uniform(&mut rng, &[2, 3, 3, 2], -1.0, 1.0).unwrap();
        let r = Tensor::uniform(&mut rng, &[2, 3], -1.0, 1.0).unwrap();
        let dx = gap_backward(x.shape(), &r).unwrap();
        check_gradient(x.data(), dx.data(), DEFAULT_STEP, 1e-5, |d| {
            gap_forward(&Tensor::new(x.shape(), d.to_vec()).unwrap()).unwrap().dot(&r).unwrap()
        })
        .unwrap();
        assert!(gap_forward(&Tensor::zeros(&[2, 3]).unwrap()).is_err());
    }
}
