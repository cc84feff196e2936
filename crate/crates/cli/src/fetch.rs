//! CIFAR-10 download, checksum verification and extraction.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use md5::{Digest, Md5};

use crate::dataset::{read_batch_file, TEST_FILE, TRAIN_FILES};
use crate::error::{CliError, Result};

pub const CIFAR10_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
pub const CIFAR10_MD5: &str = "c32a1d4ab5d03f1284b67883e8d87530";
pub const ARCHIVE_NAME: &str = "cifar-10-binary.tar.gz";
/// Directory the archive unpacks into.
pub const EXTRACTED_DIR: &str = "cifar-10-batches-bin";
pub const RECORDS_PER_BATCH: usize = 10_000;

/// Copies `src` into `dst` and returns the hex MD5 of the bytes.
fn copy_hashing(mut src: impl Read, mut dst: impl Write) -> io::Result<String> {
    let mut h = Md5::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = src.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        dst.write_all(&buf[..n])?;
    }
    Ok(hex::encode(h.finalize()))
}

pub fn md5_file(path: &Path) -> Result<String> {
    let f = File::open(path).map_err(|e| CliError::read(path, e))?;
    Ok(copy_hashing(f, io::sink())?)
}

fn download(url: &str, dst: &Path) -> Result<()> {
    let mut resp = ureq::get(url).call().map_err(|e| CliError::data(format!("download {url}: {e}")))?;
    let tmp = dst.with_extension("part");
    copy_hashing(resp.body_mut().as_reader(), File::create(&tmp)?)?;
    fs::rename(tmp, dst)?;
    Ok(())
}

/// Checks that every batch file parses to exactly 10000 records.
pub fn verify_batches(dir: &Path) -> Result<()> {
    for f in TRAIN_FILES.iter().chain([&TEST_FILE]) {
        let n = read_batch_file(&dir.join(f), 32, 10)?.len();
        if n != RECORDS_PER_BATCH {
            return Err(CliError::data(format!("{f}: {n} records, expected {RECORDS_PER_BATCH}")));
        }
    }
    Ok(())
}

/// Downloads (unless `archive` names a local copy), verifies the MD5 and
/// unpacks into `out`. Returns the batch directory.
pub fn fetch_cifar10(url: &str, md5: &str, archive: Option<&Path>, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = match archive {
        Some(p) => p.to_path_buf(),
        None => {
            let p = out.join(ARCHIVE_NAME);
            if !p.is_file() {
                download(url, &p)?;
            }
            p
        }
    };
    let got = md5_file(&path)?;
    if !got.eq_ignore_ascii_case(md5) {
        return Err(CliError::data(format!("{}: md5 {got}, expected {md5}", path.display())));
    }
    let f = File::open(&path).map_err(|e| CliError::read(&path, e))?;
    tar::Archive::new(GzDecoder::new(f)).unpack(out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let dir = out.join(EXTRACTED_DIR);
    verify_batches(&dir)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn md5_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(md5_file(&p).unwrap(), "900150983cd24fb0d6963f7d28e17f72");
    }

    #[test]
    fn checksum_mismatch_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(ARCHIVE_NAME);
        fs::write(&p, b"not an archive").unwrap();
        let e = fetch_cifar10(CIFAR10_URL, CIFAR10_MD5, Some(&p), dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("md5"));
    }

    #[test]
    fn local_archive_is_unpacked_and_verified() {
        use msr_core::data::cifar::{serialize_records, ImageRecord};
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<ImageRecord> = (0..RECORDS_PER_BATCH)
            .map(|i| ImageRecord { label: (i % 10) as u8, pixels: vec![(i % 251) as u8; 3072] })
            .collect();
        let bytes = serialize_records(&records);
        let archive = dir.path().join("a.tar.gz");
        {
            let gz = flate2::write::GzEncoder::new(File::create(&archive).unwrap(), flate2::Compression::fast());
            let mut t = tar::Builder::new(gz);
            for f in TRAIN_FILES.iter().chain([&TEST_FILE]) {
                let mut h = tar::Header::new_gnu();
                h.set_size(bytes.len() as u64);
                h.set_mode(0o644);
                h.set_cksum();
                t.append_data(&mut h, format!("{EXTRACTED_DIR}/{f}"), bytes.as_slice()).unwrap();
            }
            t.into_inner().unwrap().finish().unwrap();
        }
        let md5 = md5_file(&archive).unwrap();
        let out = dir.path().join("out");
        let got = fetch_cifar10(CIFAR10_URL, &md5, Some(&archive), &out).unwrap();
        assert_eq!(got, out.join(EXTRACTED_DIR));
        assert_eq!(read_batch_file(&got.join(TEST_FILE), 32, 10).unwrap(), records);
    }
}
