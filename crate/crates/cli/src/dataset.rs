//! Dataset files: CIFAR-10 binary batches and the synthetic generator's
//! output in the same record format.

use std::fs;
use std::path::Path;

use msr_core::data::cifar::{parse_records, serialize_records, ImageRecord, CIFAR_CLASSES, CIFAR_SIDE};
use msr_core::data::{gen_synthetic, Dataset};
use msr_core::Prng;

use crate::config::{DataConfig, DataSource};
use crate::error::{CliError, Result};

pub const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const TEST_FILE: &str = "test_batch.bin";

/// Records of `side x side` images in one batch file.
pub fn read_batch_file(path: &Path, side: usize, classes: usize) -> Result<Vec<ImageRecord>> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    parse_records(&bytes, side, side, classes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_batch_file(path: &Path, records: &[ImageRecord]) -> Result<()> {
    fs::write(path, serialize_records(records))?;
    Ok(())
}

fn dataset(records: Vec<ImageRecord>, side: usize, classes: usize, subset: usize) -> Dataset {
    let ds = Dataset { height: side, width: side, classes, records };
    if subset > 0 {
        ds.truncated(subset)
    } else {
        ds
    }
}

/// Train files that exist in `dir`, in order; CIFAR-10 has five, a
/// generated set may have only the first.
fn train_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let files: Vec<_> = TRAIN_FILES.iter().map(|f| dir.join(f)).filter(|p| p.is_file()).collect();
    if files.is_empty() {
        return Err(CliError::data(format!(
            "{}: no {} found (run `msr fetch-cifar10` or `msr gen-synthetic`)",
            dir.display(),
            TRAIN_FILES[0]
        )));
    }
    Ok(files)
}

/// Loads a directory of batch files (`data_batch_*.bin`, `test_batch.bin`).
/// Subsets keep the first `n` records of the concatenation.
pub fn load_dir(
    dir: &Path,
    side: usize,
    classes: usize,
    train_subset: usize,
    test_subset: usize,
) -> Result<(Dataset, Dataset)> {
    let mut train = Vec::new();
    for f in train_files(dir)? {
        train.extend(read_batch_file(&f, side, classes)?);
        if train_subset > 0 && train.len() >= train_subset {
            break;
        }
    }
    let test = read_batch_file(&dir.join(TEST_FILE), side, classes)?;
    Ok((dataset(train, side, classes, train_subset), dataset(test, side, classes, test_subset)))
}

/// Synthetic train and test sets; both are fixed by `cfg.seed`.
pub fn synthetic(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let root = Prng::new(cfg.seed);
    let gen = |stream, per_class, subset| -> Result<Dataset> {
        let ds = gen_synthetic(cfg.classes, per_class, cfg.image_size, &mut root.derive(stream))
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(if subset > 0 { ds.truncated(subset) } else { ds })
    };
    Ok((gen(0, cfg.train_per_class, cfg.train_subset)?, gen(1, cfg.test_per_class, cfg.test_subset)?))
}

pub fn load(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match cfg.source {
        DataSource::Synthetic => synthetic(cfg)?,
        DataSource::Cifar10 => load_dir(&cfg.dir, CIFAR_SIDE, CIFAR_CLASSES, cfg.train_subset, cfg.test_subset)?,
    };
    if train.is_empty() || test.is_empty() {
        return Err(CliError::data("training and test sets must both be non-empty"));
    }
    Ok((train, test))
}

/// Writes a synthetic set as `data_batch_1.bin` and `test_batch.bin`.
pub fn write_synthetic(cfg: &DataConfig, out: &Path) -> Result<(usize, usize)> {
    let (train, test) = synthetic(cfg)?;
    fs::create_dir_all(out)?;
    write_batch_file(&out.join(TRAIN_FILES[0]), &train.records)?;
    write_batch_file(&out.join(TEST_FILE), &test.records)?;
    let names: String = (0..cfg.classes).map(|k| format!("class_{k}\n")).collect();
    fs::write(out.join("batches.meta.txt"), names)?;
    Ok((train.len(), test.len()))
}
