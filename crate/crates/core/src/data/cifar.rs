use alloc::vec::Vec;

use super::CHANNELS;
use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD_LEN: usize = 1 + CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub label: u8,
    /// Channel-planar pixels, `3 * H * W` bytes.
    pub pixels: Vec<u8>,
}

/// Splits label-first planar records of `height x width` images.
pub fn parse_records(bytes: &[u8], height: usize, width: usize, classes: usize) -> Result<Vec<ImageRecord>> {
    let record_len = 1 + CHANNELS * height * width;
    let trailing = bytes.len() % record_len;
    if trailing != 0 {
        return Err(Error::TruncatedRecords {
            actual: bytes.len(),
            record_len,
            offset: bytes.len() - trailing,
            trailing,
        });
    }
    bytes
        .chunks_exact(record_len)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] as usize >= classes {
                return Err(Error::InvalidLabel { index: i, label: rec[0] as usize, classes });
            }
            Ok(ImageRecord { label: rec[0], pixels: rec[1..].to_vec() })
        })
        .collect()
}

/// CIFAR-10 binary batch: 3073-byte records, label byte then 32x32 R, G, B planes.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<ImageRecord>> {
    parse_records(bytes, CIFAR_SIDE, CIFAR_SIDE, CIFAR_CLASSES)
}

pub fn serialize_records(records: &[ImageRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.iter().map(|r| 1 + r.pixels.len()).sum());
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn fixture() -> Vec<u8> {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD_LEN];
        bytes[0] = 3;
        bytes[1] = 200; // first red pixel of record 0
        bytes[1024 + 1] = 100; // first green pixel
        bytes[3072] = 7; // last blue pixel
        bytes[CIFAR_RECORD_LEN] = 9;
        bytes[CIFAR_RECORD_LEN + 5] = 42;
        bytes
    }

    #[test]
    fn crafted_fixture() {
        let bytes = fixture();
        let recs = parse_cifar10(&bytes).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].label, 3);
        assert_eq!(recs[0].pixels.len(), 3072);
        assert_eq!((recs[0].pixels[0], recs[0].pixels[1024], recs[0].pixels[3071]), (200, 100, 7));
        assert_eq!((recs[1].label, recs[1].pixels[4]), (9, 42));
        assert_eq!(serialize_records(&recs), bytes);
    }

    #[test]
    fn batch_file_length() {
        assert_eq!(10_000 * CIFAR_RECORD_LEN, 30_730_000);
    }

    #[test]
    fn truncated_buffer_reports_lengths() {
        let bytes = fixture();
        let err = parse_cifar10(&bytes[..bytes.len() - 10]).unwrap_err();
        assert_eq!(err, Error::TruncatedRecords { actual: 6136, record_len: 3073, offset: 3073, trailing: 3063 });
        let msg = alloc::format!("{err}");
        assert!(msg.contains("6136") && msg.contains("3073"));
    }

    #[test]
    fn label_out_of_range() {
        let mut bytes = fixture();
        bytes[CIFAR_RECORD_LEN] = 10;
        assert_eq!(parse_cifar10(&bytes).unwrap_err(), Error::InvalidLabel { index: 1, label: 10, classes: 10 });
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parse_inverts_serialize(recs in proptest::collection::vec(
                (0u8..10, proptest::collection::vec(any::<u8>(), 3 * 4 * 3)), 0..6)
            ) {
                let records: Vec<ImageRecord> = recs.into_iter().map(|(label, pixels)| ImageRecord { label, pixels }).collect();
                let bytes = serialize_records(&records);
                prop_assert_eq!(parse_records(&bytes, 4, 3, 10).unwrap(), records);
            }
        }
    }
}
