//! Experiment configuration.
//!
//! The file format is line-based `key = value` text grouped into sections:
//!
//! ```text
//! [model]
//! architecture = resnet110
//! method = msr
//!
//! [optim]
//! lr = 0.4
//! schedule = 100:0.1, 150:0.1
//! ```
//!
//! `#` and `;` start comment lines. Every key has a default, unknown
//! sections and keys are rejected, and command line overrides are applied on
//! top of the file as `section.key=value` assignments. [`ExperimentConfig::to_text`]
//! writes the fully resolved configuration back in the same format, so the
//! echo is itself a valid config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use msr_core::arch::{Architecture, Method, NoisePlacement};
use msr_core::data::augment::Augmentation;
use msr_core::layers::noise::NoiseGranularity;
use msr_core::msr::MsrConfig;
use msr_core::optim::{CzmgOrder, LrSchedule};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Procedural classes generated in memory.
    Synthetic,
    /// CIFAR-10 binary batches in `data.dir`.
    Cifar10,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub dir: PathBuf,
    /// Seed of the synthetic generator, independent of the run seed so that
    /// trials share one dataset.
    pub seed: u64,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    /// Keep only the first `n` training records; 0 keeps all.
    pub train_subset: usize,
    pub test_subset: usize,
    pub augmentation: Augmentation,
    pub drop_last: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            dir: PathBuf::from("data/cifar-10-batches-bin"),
            seed: 1,
            classes: 10,
            train_per_class: 500,
            test_per_class: 100,
            image_size: 32,
            train_subset: 0,
            test_subset: 0,
            augmentation: Augmentation::PadCropFlip,
            drop_last: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub architecture: Architecture,
    pub method: Method,
    pub noise_placement: NoisePlacement,
    pub noise_granularity: NoiseGranularity,
    /// `None` picks the arm default.
    pub conv_bias: Option<bool>,
    pub msr: MsrConfig,
    pub czmg_order: CzmgOrder,
    pub lr: f64,
    /// `(epoch, multiplier)` pairs applied cumulatively from that epoch on.
    pub schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    /// Coupled L2 weight for the baseline and plain arms.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps even mid-epoch; 0 means no limit.
    pub max_steps: u64,
    pub data: DataConfig,
    pub seed: u64,
    pub trials: usize,
    pub out_dir: PathBuf,
    /// Evaluate every `n` epochs (and always after the last one); 0 means
    /// only at the end.
    pub eval_every: usize,
    pub eval_batch_size: usize,
    /// Per-step loss log cadence; 0 disables `steps.csv`.
    pub log_every: u64,
    /// Checkpoint every `n` epochs (and always at the end); 0 means only at
    /// the end.
    pub checkpoint_every: usize,
    /// Additional checkpoints every `n` steps; 0 disables.
    pub checkpoint_every_steps: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            architecture: Architecture::ResNet { blocks_per_stage: 18 },
            method: Method::Msr,
            noise_placement: NoisePlacement::ResidualInputs,
            noise_granularity: NoiseGranularity::Element,
            conv_bias: None,
            msr: MsrConfig::default(),
            czmg_order: CzmgOrder::BeforeMomentum,
            lr: 0.1,
            schedule: vec![(100, 0.1), (150, 0.1)],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            epochs: 200,
            max_steps: 0,
            data: DataConfig::default(),
            seed: 0,
            trials: 1,
            out_dir: PathBuf::from("runs/default"),
            eval_every: 1,
            eval_batch_size: 500,
            log_every: 0,
            checkpoint_every: 0,
            checkpoint_every_steps: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn core<T>(key: &str, r: msr_core::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::config(format!("{key}: {e}")))
}

/// `"100:0.1, 150:0.1"`; empty or `none` means a constant rate.
pub fn parse_schedule(value: &str) -> Result<Vec<(usize, f64)>> {
    let value = value.trim();
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let (e, m) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| CliError::config(format!("optim.schedule: expected epoch:multiplier, got {item:?}")))?;
            Ok((parse("optim.schedule epoch", e.trim())?, parse("optim.schedule multiplier", m.trim())?))
        })
        .collect()
}

fn augmentation_name(a: Augmentation) -> &'static str {
    match a {
        Augmentation::None => "none",
        Augmentation::PadCropFlip => "pad-crop-flip",
        Augmentation::ScaleFlip { .. } => "scale-flip",
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with a config file (if any) and then the overrides,
    /// validated.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = path {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set_dotted(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (k, v) in props.iter() {
                self.set(section, k, v)?;
            }
        }
        Ok(())
    }

    /// Applies `section.key = value`.
    pub fn set_dotted(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, k) =
            key.split_once('.').ok_or_else(|| CliError::config(format!("override {key:?} must be section.key")))?;
        self.set(section, k, value)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let full = format!("{section}.{key}");
        let k = full.as_str();
        let d = &mut self.data;
        match k {
            "model.architecture" => self.architecture = core(k, Architecture::parse(value))?,
            "model.method" => self.method = core(k, Method::parse(value))?,
            "model.noise_placement" => self.noise_placement = core(k, NoisePlacement::parse(value))?,
            "model.noise_granularity" => {
                self.noise_granularity = match value {
                    "element" => NoiseGranularity::Element,
                    "channel" => NoiseGranularity::Channel,
                    _ => return Err(CliError::config(format!("{k}: expected element or channel, got {value:?}"))),
                }
            }
            "model.conv_bias" => self.conv_bias = if value == "auto" { None } else { Some(parse_bool(k, value)?) },
            "msr.zmg" => self.msr.zmg = parse(k, value)?,
            "msr.luma_weight" => self.msr.luma_weight = parse(k, value)?,
            "msr.init_scale" => self.msr.init_scale = parse(k, value)?,
            "msr.noise_amplitude" => self.msr.noise_amplitude = parse(k, value)?,
            "msr.first_layer_czm" => self.msr.first_layer_czm = parse_bool(k, value)?,
            "msr.czmg_order" => {
                self.czmg_order = match value {
                    "before-momentum" => CzmgOrder::BeforeMomentum,
                    "after-momentum" => CzmgOrder::AfterMomentum,
                    _ => {
                        return Err(CliError::config(format!(
                            "{k}: expected before-momentum or after-momentum, got {value:?}"
                        )))
                    }
                }
            }
            "optim.lr" => self.lr = parse(k, value)?,
            "optim.schedule" => self.schedule = parse_schedule(value)?,
            "optim.momentum" => self.momentum = parse(k, value)?,
            "optim.weight_decay" => self.weight_decay = parse(k, value)?,
            "optim.batch_size" => self.batch_size = parse(k, value)?,
            "optim.epochs" => self.epochs = parse(k, value)?,
            "optim.max_steps" => self.max_steps = parse(k, value)?,
            "data.source" => {
                d.source = match value {
                    "synthetic" => DataSource::Synthetic,
                    "cifar10" => DataSource::Cifar10,
                    _ => return Err(CliError::config(format!("{k}: expected synthetic or cifar10, got {value:?}"))),
                }
            }
            "data.dir" => d.dir = PathBuf::from(value),
            "data.seed" => d.seed = parse(k, value)?,
            "data.classes" => d.classes = parse(k, value)?,
            "data.train_per_class" => d.train_per_class = parse(k, value)?,
            "data.test_per_class" => d.test_per_class = parse(k, value)?,
            "data.image_size" => d.image_size = parse(k, value)?,
            "data.train_subset" => d.train_subset = parse(k, value)?,
            "data.test_subset" => d.test_subset = parse(k, value)?,
            "data.augmentation" => {
                d.augmentation = match value {
                    "none" => Augmentation::None,
                    "pad-crop-flip" => Augmentation::PadCropFlip,
                    "scale-flip" => Augmentation::ScaleFlip {
                        max_scale: match d.augmentation {
                            Augmentation::ScaleFlip { max_scale } => max_scale,
                            _ => 1.25,
                        },
                    },
                    _ => {
                        return Err(CliError::config(format!(
                            "{k}: expected none, pad-crop-flip or scale-flip, got {value:?}"
                        )))
                    }
                }
            }
            "data.max_scale" => {
                let s = parse(k, value)?;
                if let Augmentation::ScaleFlip { max_scale } = &mut d.augmentation {
                    *max_scale = s;
                } else {
                    return Err(CliError::config("data.max_scale requires data.augmentation = scale-flip set first"));
                }
            }
            "data.drop_last" => d.drop_last = parse_bool(k, value)?,
            "run.seed" => self.seed = parse(k, value)?,
            "run.trials" => self.trials = parse(k, value)?,
            "run.out_dir" => self.out_dir = PathBuf::from(value),
            "run.eval_every" => self.eval_every = parse(k, value)?,
            "run.eval_batch_size" => self.eval_batch_size = parse(k, value)?,
            "run.log_every" => self.log_every = parse(k, value)?,
            "run.checkpoint_every" => self.checkpoint_every = parse(k, value)?,
            "run.checkpoint_every_steps" => self.checkpoint_every_steps = parse(k, value)?,
            _ => return Err(CliError::config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("optim.lr = {} must be positive and finite", self.lr));
        }
        core("optim.schedule", LrSchedule::new(self.lr, self.schedule.clone()))?;
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("optim.momentum = {} must be in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("optim.weight_decay = {} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("optim.epochs must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("run.trials must be at least 1".into());
        }
        core("msr", self.msr.validate())?;
        let d = &self.data;
        if let Augmentation::ScaleFlip { max_scale } = d.augmentation {
            if !(1.0..=4.0).contains(&max_scale) {
                return bad(format!("data.max_scale = {max_scale} must be in [1, 4]"));
            }
        }
        match d.source {
            DataSource::Synthetic => {
                if !(2..=256).contains(&d.classes) {
                    return bad(format!("data.classes = {} must be in [2, 256]", d.classes));
                }
                if d.train_per_class == 0 || d.test_per_class == 0 {
                    return bad("data.train_per_class and data.test_per_class must be at least 1".into());
                }
                if !(8..=256).contains(&d.image_size) {
                    return bad(format!("data.image_size = {} must be in [8, 256]", d.image_size));
                }
            }
            DataSource::Cifar10 => {
                if d.classes != 10 || d.image_size != 32 {
                    return bad("cifar10 data has 10 classes of 32x32 images; leave data.classes and data.image_size at 10 and 32".into());
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.lr, self.schedule.clone()).expect("validated schedule")
    }

    /// Full resolved configuration in the file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        let schedule = if self.schedule.is_empty() {
            "none".to_string()
        } else {
            self.schedule.iter().map(|(e, m)| format!("{e}:{m}")).collect::<Vec<_>>().join(", ")
        };
        let _ = write!(
            s,
            "[model]\n\
             architecture = {}\n\
             method = {}\n\
             noise_placement = {}\n\
             noise_granularity = {}\n\
             conv_bias = {}\n\
             \n[msr]\n\
             zmg = {}\n\
             luma_weight = {}\n\
             init_scale = {}\n\
             noise_amplitude = {}\n\
             first_layer_czm = {}\n\
             czmg_order = {}\n\
             \n[optim]\n\
             lr = {}\n\
             schedule = {schedule}\n\
             momentum = {}\n\
             weight_decay = {}\n\
             batch_size = {}\n\
             epochs = {}\n\
             max_steps = {}\n\
             \n[data]\n\
             source = {}\n\
             dir = {}\n\
             seed = {}\n\
             classes = {}\n\
             train_per_class = {}\n\
             test_per_class = {}\n\
             image_size = {}\n\
             train_subset = {}\n\
             test_subset = {}\n\
             augmentation = {}\n",
            self.architecture.name(),
            self.method.name(),
            self.noise_placement.name(),
            match self.noise_granularity {
                NoiseGranularity::Element => "element",
                NoiseGranularity::Channel => "channel",
            },
            self.conv_bias.map_or("auto".to_string(), |b| b.to_string()),
            self.msr.zmg,
            self.msr.luma_weight,
            self.msr.init_scale,
            self.msr.noise_amplitude,
            self.msr.first_layer_czm,
            match self.czmg_order {
                CzmgOrder::BeforeMomentum => "before-momentum",
                CzmgOrder::AfterMomentum => "after-momentum",
            },
            self.lr,
            self.momentum,
            self.weight_decay,
            self.batch_size,
            self.epochs,
            self.max_steps,
            match d.source {
                DataSource::Synthetic => "synthetic",
                DataSource::Cifar10 => "cifar10",
            },
            d.dir.display(),
            d.seed,
            d.classes,
            d.train_per_class,
            d.test_per_class,
            d.image_size,
            d.train_subset,
            d.test_subset,
            augmentation_name(d.augmentation),
        );
        if let Augmentation::ScaleFlip { max_scale } = d.augmentation {
            let _ = writeln!(s, "max_scale = {max_scale}");
        }
        let _ = write!(
            s,
            "drop_last = {}\n\
             \n[run]\n\
             seed = {}\n\
             trials = {}\n\
             out_dir = {}\n\
             eval_every = {}\n\
             eval_batch_size = {}\n\
             log_every = {}\n\
             checkpoint_every = {}\n\
             checkpoint_every_steps = {}\n",
            d.drop_last,
            self.seed,
            self.trials,
            self.out_dir.display(),
            self.eval_every,
            self.eval_batch_size,
            self.log_every,
            self.checkpoint_every,
            self.checkpoint_every_steps,
        );
        s
    }
}
