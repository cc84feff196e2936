//! Train-time augmentation on planar `u8` images.
//!
//! Draw order per image: flip decision (`below(2) == 1` flips), then the
//! transform's offsets (`below` per axis, rows first) or, for scale jitter,
//! one `uniform` scale draw followed by the offsets.

use alloc::vec;
use alloc::vec::Vec;

use super::CHANNELS;
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Augmentation {
    None,
    /// Horizontal flip with probability 1/2, zero-pad by `pad` on every
    /// side, random crop back to the original size.
    #[default]
    PadCropFlip,
    /// Horizontal flip, bilinear upscale by `s ~ U(1, max_scale)`, random
    /// crop back to the original size.
    ScaleFlip {
        max_scale: f64,
    },
}

pub const CROP_PAD: usize = 4;

fn flip(img: &mut [u8], h: usize, w: usize) {
    for row in img.chunks_mut(w).take(CHANNELS * h) {
        row.reverse();
    }
}

/// Returns an augmented copy; shape and channel layout are unchanged.
pub fn augment<R: RandomSource + ?Sized>(img: &[u8], h: usize, w: usize, aug: Augmentation, rng: &mut R) -> Vec<u8> {
    let mut out = img.to_vec();
    if aug == Augmentation::None {
        return out;
    }
    if rng.below(2) == 1 {
        flip(&mut out, h, w);
    }
    match aug {
        Augmentation::None => out,
        Augmentation::PadCropFlip => {
            let dy = rng.below(2 * CROP_PAD as u64 + 1) as isize - CROP_PAD as isize;
            let dx = rng.below(2 * CROP_PAD as u64 + 1) as isize - CROP_PAD as isize;
            let mut cropped = vec![0u8; out.len()];
            for c in 0..CHANNELS {
                for i in 0..h {
                    let si = i as isize + dy;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + dx;
                        if sj >= 0 && sj < w as isize {
                            cropped[(c * h + i) * w + j] = out[(c * h + si as usize) * w + sj as usize];
                        }
                    }
                }
            }
            cropped
        }
        Augmentation::ScaleFlip { max_scale } => {
            let s = if max_scale > 1.0 { rng.uniform(1.0, max_scale) } else { 1.0 };
            let (sh, sw) = (libm::round(h as f64 * s) as usize, libm::round(w as f64 * s) as usize);
            let oy = rng.below((sh - h + 1) as u64) as usize;
            let ox = rng.below((sw - w + 1) as u64) as usize;
            let mut res = vec![0u8; out.len()];
            for c in 0..CHANNELS {
                let plane = &out[c * h * w..(c + 1) * h * w];
                for i in 0..h {
                    // sample the upscaled image at (oy + i, ox + j)
                    let fy = (((oy + i) as f64 + 0.5) * h as f64 / sh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                    let (y0, ty) = (fy as usize, fy - libm::floor(fy));
                    let y1 = (y0 + 1).min(h - 1);
                    for j in 0..w {
                        let fx = (((ox + j) as f64 + 0.5) * w as f64 / sw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                        let (x0, tx) = (fx as usize, fx - libm::floor(fx));
                        let x1 = (x0 + 1).min(w - 1);
                        let p = |y: usize, x: usize| plane[y * w + x] as f64;
                        let v = (1.0 - ty) * ((1.0 - tx) * p(y0, x0) + tx * p(y0, x1))
                            + ty * ((1.0 - tx) * p(y1, x0) + tx * p(y1, x1));
                        res[(c * h + i) * w + j] = libm::round(v).clamp(0.0, 255.0) as u8;
                    }
                }
            }
            res
        }
    }
}
