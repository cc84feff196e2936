//! Image datasets: the CIFAR-10 record format, normalization, augmentation,
//! batching and a procedural generator.
//!
//! All datasets, generated or parsed, share one record layout: a label byte
//! followed by the channel-planar pixels (all red, then green, then blue),
//! each plane row-major. CIFAR-10 fixes the planes at 32x32, giving 3073
//! bytes per record.

pub mod augment;
pub mod batch;
pub mod cifar;
pub mod synthetic;

pub use augment::{augment, Augmentation};
pub use batch::{epoch_batches, make_batch, Batch};
pub use cifar::{parse_cifar10, parse_records, serialize_records, ImageRecord, CIFAR_RECORD_LEN};
pub use synthetic::gen_synthetic;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub records: Vec<ImageRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    /// First `n` records (or all of them).
    pub fn truncated(mut self, n: usize) -> Self {
        self.records.truncate(n);
        self
    }
}

/// Per-channel mean and standard deviation of `pixel / 255`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats { mean: [0.0; CHANNELS], std: [1.0; CHANNELS] };

    /// Population statistics over every pixel of every record.
    pub fn compute(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Invalid("cannot compute statistics of an empty dataset".into()));
        }
        let plane = ds.height * ds.width;
        let count = (plane * ds.len()) as f64;
        let mut mean = [0.0; CHANNELS];
        let mut sq = [0.0; CHANNELS];
        for r in &ds.records {
            for (c, p) in r.pixels.chunks(plane).enumerate() {
                mean[c] += p.iter().map(|&v| v as f64 / 255.0).sum::<f64>();
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        for r in &ds.records {
            for (c, p) in r.pixels.chunks(plane).enumerate() {
                sq[c] += p
                    .iter()
                    .map(|&v| {
                        let d = v as f64 / 255.0 - mean[c];
                        d * d
                    })
                    .sum::<f64>();
            }
        }
        let std = sq.map(|s| libm::sqrt(s / count));
        Ok(ChannelStats { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&s) = self.std.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::OutOfRange { name: "channel std", value: s, expected: "(0, inf)" });
        }
        Ok(())
    }
}

/// `(pixel / 255 - mean_c) / std_c` for a list of planar images of equal
/// size, stacked into `[N, 3, H, W]`.
pub fn normalize<'a>(
    images: impl IntoIterator<Item = &'a [u8]>,
    height: usize,
    width: usize,
    stats: &ChannelStats,
) -> Result<Tensor> {
    stats.validate()?;
    let plane = height * width;
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.len() != CHANNELS * plane {
            return Err(Error::shape("normalize image", &[img.len()], &[CHANNELS, height, width]));
        }
        for (c, p) in img.chunks(plane).enumerate() {
            let (m, s) = (stats.mean[c], stats.std[c]);
            data.extend(p.iter().map(|&v| (v as f64 / 255.0 - m) / s));
        }
        n += 1;
    }
    Tensor::new(&[n, CHANNELS, height, width], data)
}
