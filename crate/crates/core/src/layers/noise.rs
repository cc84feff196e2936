//! Multiplicative uniform noise with unit mean.
//!
//! In train mode `y = x * u` with `u ~ U(1 - a, 1 + a)`; the mask is handed
//! back to the caller and the backward pass multiplies the incoming gradient
//! by it. Eval mode and `a = 0` return the input untouched and draw nothing
//! from the generator.

use alloc::vec::Vec;

use super::Mode;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Whether one factor is drawn per element or per `(sample, channel)` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseGranularity {
    #[default]
    Element,
    Channel,
}

pub fn check_amplitude(amplitude: f64) -> Result<()> {
    if !(0.0..1.0).contains(&amplitude) {
        return Err(Error::OutOfRange { name: "noise amplitude", value: amplitude, expected: "[0, 1)" });
    }
    Ok(())
}

pub fn noise_forward<R: RandomSource + ?Sized>(
    x: &Tensor,
    amplitude: f64,
    mode: Mode,
    granularity: NoiseGranularity,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    check_amplitude(amplitude)?;
    if mode == Mode::Eval || amplitude == 0.0 {
        return Ok((x.clone(), None));
    }
    let (lo, hi) = (1.0 - amplitude, 1.0 + amplitude);
    let mask = match granularity {
        NoiseGranularity::Element => Tensor::uniform(rng, x.shape(), lo, hi)?,
        NoiseGranularity::Channel => {
            if x.rank() < 2 {
                return Err(Error::InvalidShape {
                    shape: x.shape().to_vec(),
                    reason: "per-channel noise needs at least [N, C]".into(),
                });
            }
            let maps = x.shape()[0] * x.shape()[1];
            let per_map = x.len() / maps;
            let mut data = Vec::with_capacity(x.len());
            for _ in 0..maps {
                let u = rng.uniform(lo, hi);
                data.extend(core::iter::repeat(u).take(per_map));
            }
            Tensor::new(x.shape(), data)?
        }
    };
    Ok((x.mul(&mask)?, Some(mask)))
}

pub fn noise_backward(dy: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => dy.mul(m),
        None => Ok(dy.clone()),
    }
}
