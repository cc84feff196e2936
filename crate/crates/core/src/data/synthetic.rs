//! Procedural image classes for fast deterministic runs.
//!
//! Class `k` of `K` is an oriented sinusoidal grating at angle `pi * k / K`
//! with a class colour tint, plus a Gaussian blob at a class-specific
//! position on a circle around the centre. Each sample draws a random
//! grating phase, a jitter of the blob position and per-pixel Gaussian noise.
//! Labels cycle `0, 1, ..., K - 1, 0, ...`.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use super::{Dataset, ImageRecord, CHANNELS};
use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub fn gen_synthetic<R: RandomSource + ?Sized>(
    n_classes: usize,
    n_per_class: usize,
    size: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if n_classes < 2 || n_classes > 256 || size < 4 {
        return Err(Error::Invalid("synthetic data needs 2..=256 classes and images of at least 4x4".into()));
    }
    let s = size as f64;
    let mut records = Vec::with_capacity(n_classes * n_per_class);
    for i in 0..n_classes * n_per_class {
        let k = i % n_classes;
        let frac = k as f64 / n_classes as f64;
        let theta = PI * frac;
        let freq = TAU * (2.0 + (k % 3) as f64) / s;
        let phase = rng.uniform(0.0, TAU);
        let (bx, by) = (
            s * (0.5 + 0.25 * libm::cos(TAU * frac)) + rng.uniform(-1.0, 1.0),
            s * (0.5 + 0.25 * libm::sin(TAU * frac)) + rng.uniform(-1.0, 1.0),
        );
        let radius2 = (s / 6.0) * (s / 6.0);
        let mut pixels = Vec::with_capacity(CHANNELS * size * size);
        for c in 0..CHANNELS {
            let tint = libm::cos(TAU * (frac + c as f64 / 3.0));
            for y in 0..size {
                for x in 0..size {
                    let (xf, yf) = (x as f64, y as f64);
                    let grating = libm::sin(freq * (xf * libm::cos(theta) + yf * libm::sin(theta)) + phase);
                    let d2 = (xf - bx) * (xf - bx) + (yf - by) * (yf - by);
                    let blob = libm::exp(-d2 / (2.0 * radius2));
                    let v = 0.45 + 0.2 * tint + 0.25 * grating + 0.3 * blob + 0.08 * rng.normal();
                    pixels.push(libm::round(v.clamp(0.0, 1.0) * 255.0) as u8);
                }
            }
        }
        records.push(ImageRecord { label: k as u8, pixels });
    }
    Ok(Dataset { height: size, width: size, classes: n_classes, records })
}
