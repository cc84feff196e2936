//! Command line: `msr <command> [--config PATH] [flags]`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use msr_core::msr::shift_diagnostics;

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::fetch::{fetch_cifar10, CIFAR10_MD5, CIFAR10_URL};
use crate::metrics::CsvLog;
use crate::report::{filter_rows, render, FILTER_HEADER};
use crate::train::{self, evaluate, TrainState};

#[derive(Debug, Parser)]
#[command(name = "msr", version, about = "Train and inspect normalization-free CNNs with mean shift rejection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Config file (`key = value` lines in `[sections]`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed (`run.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Independent trials with seeds `seed .. seed + trials - 1` (`run.trials`).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Output directory (`run.out_dir`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Any config key as `section.key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        zmg: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Top-1 accuracy of a checkpoint on its configured test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Filter magnitude and mean-shift diagnostics of a checkpoint.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write a procedural dataset in the CIFAR-10 binary record format.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        test_per_class: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Download, verify and unpack the CIFAR-10 binary archive.
    FetchCifar10 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = CIFAR10_URL)]
        url: String,
        #[arg(long, default_value = CIFAR10_MD5)]
        md5: String,
        /// Use an already downloaded archive instead of the network.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
}

impl Common {
    /// Flag overrides as `section.key` assignments, after `extra`.
    fn overrides(&self, extra: Vec<(&str, Option<String>)>) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> =
            extra.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))).collect();
        if let Some(s) = self.seed {
            out.push(("run.seed".into(), s.to_string()));
        }
        if let Some(t) = self.trials {
            out.push(("run.trials".into(), t.to_string()));
        }
        if let Some(d) = &self.out_dir {
            out.push(("run.out_dir".into(), d.display().to_string()));
        }
        for s in &self.set {
            let (k, v) =
                s.split_once('=').ok_or_else(|| CliError::config(format!("--set {s:?} must be section.key=value")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn load(&self, extra: Vec<(&str, Option<String>)>) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides(extra)?)
    }

    /// Checkpoint config with the config file and flags layered on top.
    fn over_checkpoint(&self, ck: &Checkpoint) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_text(&ck.config)?;
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in self.overrides(Vec::new())? {
            cfg.set_dotted(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs `cfg.trials` seeds; with more than one trial each goes to
/// `trial-<k>/` and `summary.csv` gets one row per trial plus mean and
/// (sample) standard deviation.
pub fn train_trials(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.trials == 1 {
        let out = train::train(cfg, &cfg.out_dir)?;
        return Ok(format!(
            "trained {} steps; final train_acc {} test_acc {}; outputs in {}\n",
            out.state.optim.step,
            out.final_train_acc,
            out.final_test_acc,
            cfg.out_dir.display()
        ));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let mut summary = CsvLog::create(&cfg.out_dir.join("summary.csv"), &["seed", "train_acc", "test_acc", "status"])?;
    let (mut train_accs, mut test_accs) = (Vec::new(), Vec::new());
    let mut first_divergence = None;
    let mut text = String::new();
    for k in 0..cfg.trials {
        let seed = cfg.seed + k as u64;
        let trial =
            ExperimentConfig { seed, trials: 1, out_dir: cfg.out_dir.join(format!("trial-{k}")), ..cfg.clone() };
        match train::train(&trial, &trial.out_dir) {
            Ok(out) => {
                summary.row([
                    seed.to_string(),
                    out.final_train_acc.to_string(),
                    out.final_test_acc.to_string(),
                    "ok".into(),
                ])?;
                let _ =
                    writeln!(text, "seed {seed}: train_acc {} test_acc {}", out.final_train_acc, out.final_test_acc);
                train_accs.push(out.final_train_acc);
                test_accs.push(out.final_test_acc);
            }
            Err(e @ CliError::Divergence(_)) => {
                summary.row([seed.to_string(), String::new(), String::new(), "diverged".into()])?;
                let _ = writeln!(text, "seed {seed}: {e}");
                first_divergence.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if !test_accs.is_empty() {
        let ((trm, trs), (tem, tes)) = (mean_std(&train_accs), mean_std(&test_accs));
        summary.row(["mean".into(), trm.to_string(), tem.to_string(), format!("{} ok", test_accs.len())])?;
        summary.row(["std".into(), trs.to_string(), tes.to_string(), String::new()])?;
        let _ = writeln!(text, "test_acc {tem} ± {tes} over {} trials", test_accs.len());
    }
    match first_divergence {
        Some(e) => Err(e),
        None => Ok(text),
    }
}

/// Accuracy of a checkpoint on the test split its (possibly overridden)
/// config names.
pub fn eval_checkpoint(path: &Path, common: &Common) -> Result<f64> {
    let ck = Checkpoint::load(path)?;
    let cfg = common.over_checkpoint(&ck)?;
    let (_, state) = TrainState::from_checkpoint(&ck)?;
    let (_, test) = crate::dataset::load(&cfg.data)?;
    if test.classes != state.classes() {
        return Err(CliError::data(format!(
            "checkpoint model has {} classes, test data has {}",
            state.classes(),
            test.classes
        )));
    }
    evaluate(&state.net, &test, &state.stats, cfg.eval_batch_size)
}

pub fn inspect_checkpoint(path: &Path, out_dir: Option<&Path>) -> Result<String> {
    let ck = Checkpoint::load(path)?;
    let (cfg, state) = TrainState::from_checkpoint(&ck)?;
    let lr = cfg.schedule().lr_at(state.optim.epoch.min(cfg.epochs.saturating_sub(1)));
    let d = shift_diagnostics(&state.net, lr);
    let mut s = format!(
        "{}: {} / {}, step {}, epoch {}\n\n",
        path.display(),
        cfg.architecture.name(),
        cfg.method.name(),
        state.optim.step,
        state.optim.epoch
    );
    s.push_str(&render(&d));
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut log = CsvLog::create(&dir.join("filters.csv"), &FILTER_HEADER)?;
        for row in filter_rows(&d) {
            log.row(row)?;
        }
        fs::write(dir.join("inspect.txt"), &s)?;
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train { common, arch, method, lr, epochs, max_steps, batch_size, zmg, noise, resume } => {
            let flags = vec![
                ("model.architecture", arch),
                ("model.method", method),
                ("optim.lr", lr.map(|v| v.to_string())),
                ("optim.epochs", epochs.map(|v| v.to_string())),
                ("optim.max_steps", max_steps.map(|v| v.to_string())),
                ("optim.batch_size", batch_size.map(|v| v.to_string())),
                ("msr.zmg", zmg.map(|v| v.to_string())),
                ("msr.noise_amplitude", noise.map(|v| v.to_string())),
            ];
            match resume {
                Some(ck) => {
                    if common.config.is_some() {
                        return Err(CliError::config(
                            "--resume takes its config from the checkpoint; use flags or --set",
                        ));
                    }
                    let out = train::resume(&ck, &common.overrides(flags)?, None)?;
                    Ok(format!("resumed to step {}; final test_acc {}\n", out.state.optim.step, out.final_test_acc))
                }
                None => train_trials(&common.load(flags)?),
            }
        }
        Command::Eval { common, checkpoint } => {
            let acc = eval_checkpoint(&checkpoint, &common)?;
            if let Some(d) = &common.out_dir {
                fs::create_dir_all(d)?;
                fs::write(d.join("eval.txt"), format!("test_acc = {acc}\n"))?;
            }
            Ok(format!("test_acc = {acc}\n"))
        }
        Command::Inspect { common, checkpoint } => inspect_checkpoint(&checkpoint, common.out_dir.as_deref()),
        Command::GenSynthetic { common, classes, per_class, test_per_class, size } => {
            let mut extra = vec![
                ("data.source", Some("synthetic".to_string())),
                ("data.classes", classes.map(|v| v.to_string())),
                ("data.train_per_class", per_class.map(|v| v.to_string())),
                ("data.test_per_class", test_per_class.map(|v| v.to_string())),
                ("data.image_size", size.map(|v| v.to_string())),
            ];
            // the run seed picks the generated data here
            extra.push(("data.seed", common.seed.map(|v| v.to_string())));
            let cfg = common.load(extra)?;
            if cfg.data.source != DataSource::Synthetic {
                return Err(CliError::config("gen-synthetic needs data.source = synthetic"));
            }
            let out = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("data/synthetic"));
            let (n_train, n_test) = crate::dataset::write_synthetic(&cfg.data, &out)?;
            Ok(format!("wrote {n_train} training and {n_test} test records to {}\n", out.display()))
        }
        Command::FetchCifar10 { common, url, md5, archive } => {
            let out = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
            let dir = fetch_cifar10(&url, &md5, archive.as_deref(), &out)?;
            Ok(format!("CIFAR-10 batches verified in {}\n", dir.display()))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("msr: {e}");
            e.exit_code()
        }
    }
}
