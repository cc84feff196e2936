use alloc::vec::Vec;

use super::augment::{augment, Augmentation};
use super::{normalize, ChannelStats, Dataset};
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[N, 3, H, W]`, normalized.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// One epoch's batches as index lists: a fresh uniform shuffle of `0..n`
/// cut into chunks of `batch_size`. The final partial chunk is kept unless
/// `drop_last`, so 50000 samples at 128 give 391 batches (390 when dropped).
pub fn epoch_batches<R: RandomSource>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
    drop_last: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(batch_size).filter(|c| !drop_last || c.len() == batch_size).map(<[usize]>::to_vec).collect())
}

/// Gathers, augments and normalizes the records at `indices`.
pub fn make_batch<R: RandomSource + ?Sized>(
    ds: &Dataset,
    indices: &[usize],
    stats: &ChannelStats,
    aug: Augmentation,
    rng: &mut R,
) -> Result<Batch> {
    if indices.is_empty() {
        return Err(Error::Invalid("a batch needs at least one sample".into()));
    }
    let images: Vec<Vec<u8>> =
        indices.iter().map(|&i| augment(&ds.records[i].pixels, ds.height, ds.width, aug, rng)).collect();
    Ok(Batch {
        images: normalize(images.iter().map(Vec::as_slice), ds.height, ds.width, stats)?,
        labels: indices.iter().map(|&i| ds.records[i].label as usize).collect(),
    })
}
