//! CSV logs written during training.
//!
//! * `metrics.csv`: one row per epoch (and one for a final partial epoch when
//!   `max_steps` stops mid-epoch). Fully determined by seed and config.
//! * `steps.csv`: per-step loss, batch accuracy and zero-mean drift at the
//!   configured cadence.
//! * `timing.csv`: wall-clock seconds per epoch row, kept apart so the other
//!   two files stay byte-identical across repeated runs.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use msr_core::msr::ShiftDiagnostics;

use crate::error::{CliError, Result};

pub const METRICS_HEADER: [&str; 17] = [
    "epoch",
    "step",
    "lr",
    "train_loss",
    "train_acc",
    "test_acc",
    "luma_loss",
    "w_norm_mean",
    "w_norm_min",
    "w_norm_max",
    "v_norm_min",
    "v_norm_max",
    "max_slice_mean",
    "max_slice_mean_all",
    "eff_lr_mean",
    "eff_lr_max",
    "deflated",
];

pub const STEPS_HEADER: [&str; 6] = ["step", "epoch", "lr", "loss", "acc", "max_slice_mean"];
pub const TIMING_HEADER: [&str; 3] = ["epoch", "step", "seconds"];

/// Filters with `||W|| < DEFLATED_BELOW` count as deflated.
pub const DEFLATED_BELOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Mean per-step LUMA (msr arm) or L2 (other arms) penalty.
    pub luma_loss: f64,
    pub w_norm_mean: f64,
    pub w_norm_min: f64,
    pub w_norm_max: f64,
    pub v_norm_min: f64,
    pub v_norm_max: f64,
    /// Over kernels under the zero-mean machinery.
    pub max_slice_mean: f64,
    /// Over every spatial kernel, eligible or not.
    pub max_slice_mean_all: f64,
    pub eff_lr_mean: f64,
    pub eff_lr_max: f64,
    pub deflated: usize,
}

impl MetricsRow {
    /// Fills the diagnostic columns from a network report.
    pub fn with_diagnostics(mut self, d: &ShiftDiagnostics) -> Self {
        let (w, v, e) = (d.w_norms(), d.v_norms(), d.effective_lrs());
        self.w_norm_mean = w.mean;
        self.w_norm_min = w.min;
        self.w_norm_max = w.max;
        self.v_norm_min = v.min;
        self.v_norm_max = v.max;
        self.max_slice_mean = d.max_slice_mean();
        self.max_slice_mean_all =
            d.layers.iter().filter(|l| l.shape[2] * l.shape[3] > 1).fold(0.0, |m, l| m.max(l.max_abs_slice_mean));
        self.eff_lr_mean = e.mean;
        self.eff_lr_max = e.max;
        self.deflated = d.deflated(DEFLATED_BELOW);
        self
    }

    fn record(&self) -> [String; 17] {
        [
            self.epoch.to_string(),
            self.step.to_string(),
            self.lr.to_string(),
            self.train_loss.to_string(),
            self.train_acc.to_string(),
            self.test_acc.map_or(String::new(), |a| a.to_string()),
            self.luma_loss.to_string(),
            self.w_norm_mean.to_string(),
            self.w_norm_min.to_string(),
            self.w_norm_max.to_string(),
            self.v_norm_min.to_string(),
            self.v_norm_max.to_string(),
            self.max_slice_mean.to_string(),
            self.max_slice_mean_all.to_string(),
            self.eff_lr_mean.to_string(),
            self.eff_lr_max.to_string(),
            self.deflated.to_string(),
        ]
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// A CSV file with a fixed header, flushed after every row so a crashed or
/// diverged run keeps everything logged so far.
pub struct CsvLog {
    w: csv::Writer<BufWriter<File>>,
}

impl CsvLog {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(header).map_err(csv_err)?;
        w.flush()?;
        Ok(CsvLog { w })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(csv_err)?;
        self.w.flush()?;
        Ok(())
    }

    pub fn metrics(&mut self, r: &MetricsRow) -> Result<()> {
        self.row(r.record())
    }
}

/// Reads a CSV written by [`CsvLog`] back as header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
