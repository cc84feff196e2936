//! Training loop, evaluation and the checkpoint mapping of training state.
//!
//! Randomness comes from four streams derived from the run seed: model
//! initialization (0), epoch shuffles (1), augmentation (2) and noise
//! injection (3). Evaluation draws from none of them, so it can run at any
//! cadence without changing the training trajectory.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use msr_core::arch::{build_model, Method, ModelOptions};
use msr_core::data::batch::{epoch_batches, make_batch};
use msr_core::data::{normalize, ChannelStats, Dataset, CHANNELS};
use msr_core::layers::loss::softmax_xent;
use msr_core::msr::shift_diagnostics;
use msr_core::optim::{baseline_l2_step, msr_update_pipeline, OptimState};
use msr_core::{Mode, Network, Prng, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::metrics::{CsvLog, MetricsRow, METRICS_HEADER, STEPS_HEADER, TIMING_HEADER};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_AUGMENT: u64 = 2;
pub const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub shuffle: Prng,
    pub augment: Prng,
    pub noise: Prng,
}

/// Running sums over the current epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochAccum {
    pub loss_sum: f64,
    pub penalty_sum: f64,
    pub correct: u64,
    pub seen: u64,
    pub steps: u64,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub net: Network,
    pub optim: OptimState,
    pub streams: Streams,
    pub stats: ChannelStats,
    /// Sample order of the current epoch, empty between epochs.
    pub order: Vec<usize>,
    /// Batches of `order` already consumed.
    pub batch_in_epoch: usize,
    pub acc: EpochAccum,
    pub last_test_acc: Option<f64>,
}

pub fn model_options(cfg: &ExperimentConfig, classes: usize) -> ModelOptions {
    ModelOptions {
        method: cfg.method,
        msr: cfg.msr,
        in_channels: CHANNELS,
        classes,
        noise_placement: cfg.noise_placement,
        noise_granularity: cfg.noise_granularity,
        conv_bias: cfg.conv_bias,
    }
}

fn build(cfg: &ExperimentConfig, classes: usize) -> Result<Network> {
    let mut init = Prng::new(cfg.seed).derive(STREAM_INIT);
    build_model(cfg.architecture, &model_options(cfg, classes), &mut init).map_err(|e| CliError::config(e.to_string()))
}

impl TrainState {
    pub fn fresh(cfg: &ExperimentConfig, train: &Dataset) -> Result<Self> {
        let net = build(cfg, train.classes)?;
        let root = Prng::new(cfg.seed);
        Ok(TrainState {
            optim: OptimState::new(&net, cfg.momentum).map_err(|e| CliError::config(e.to_string()))?,
            net,
            streams: Streams {
                shuffle: root.derive(STREAM_SHUFFLE),
                augment: root.derive(STREAM_AUGMENT),
                noise: root.derive(STREAM_NOISE),
            },
            stats: ChannelStats::compute(train).map_err(|e| CliError::data(e.to_string()))?,
            order: Vec::new(),
            batch_in_epoch: 0,
            acc: EpochAccum::default(),
            last_test_acc: None,
        })
    }

    pub fn classes(&self) -> usize {
        match self.net.layers.last() {
            Some(msr_core::Layer::Linear(p)) => p.out_features(),
            _ => 0,
        }
    }

    pub fn to_checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        let mut c = Checkpoint::new(cfg.to_text());
        let classes = self.classes() as u64;
        c.push_u64("model/classes", vec![classes]);
        for p in self.net.params() {
            c.push_f64(format!("param/{}", p.name), p.tensor.shape(), p.tensor.data().to_vec());
        }
        for (name, t) in self.net.buffers() {
            c.push_f64(format!("buffer/{name}"), t.shape(), t.data().to_vec());
        }
        for (p, v) in self.net.params().iter().zip(&self.optim.velocity) {
            c.push_f64(format!("optim/velocity/{}", p.name), v.shape(), v.data().to_vec());
        }
        let mut stats = self.stats.mean.to_vec();
        stats.extend(self.stats.std);
        c.push_f64("data/channel_stats", &[2, CHANNELS], stats);
        for (name, r) in [
            ("rng/shuffle", &self.streams.shuffle),
            ("rng/augment", &self.streams.augment),
            ("rng/noise", &self.streams.noise),
        ] {
            let mut words = vec![r.seed()];
            words.extend(r.state());
            c.push_u64(name, words);
        }
        c.push_u64(
            "counters",
            vec![
                self.optim.step,
                self.optim.epoch as u64,
                self.batch_in_epoch as u64,
                self.acc.correct,
                self.acc.seen,
                self.acc.steps,
            ],
        );
        c.push_f64("counters/epoch_sums", &[2], vec![self.acc.loss_sum, self.acc.penalty_sum]);
        c.push_f64("counters/last_test_acc", &[1], vec![self.last_test_acc.unwrap_or(f64::NAN)]);
        c.push_u64("data/epoch_order", self.order.iter().map(|&i| i as u64).collect());
        c
    }

    /// Rebuilds the resolved config and the training state. Every model
    /// tensor must be present with the shape the config's architecture
    /// implies.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<(ExperimentConfig, Self)> {
        let cfg = ExperimentConfig::from_text(&c.config)?;
        let classes = c.u64s("model/classes")?.first().copied().unwrap_or(0) as usize;
        let mut net = build(&cfg, classes)?;
        let load = |name: &str, t: &mut Tensor| -> Result<()> {
            let (shape, data) = c.f64s(name)?;
            if shape != t.shape() {
                return Err(CliError::data(format!(
                    "{name}: checkpoint shape {shape:?} does not match the architecture's {:?}",
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(data);
            Ok(())
        };
        let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
        let mut velocity = Vec::with_capacity(names.len());
        for p in net.params_mut() {
            load(&format!("param/{}", p.name), p.tensor)?;
            let mut v = p.tensor.zeros_like();
            load(&format!("optim/velocity/{}", p.name), &mut v)?;
            velocity.push(v);
        }
        for (name, t) in net.buffers_mut() {
            load(&format!("buffer/{name}"), t)?;
        }
        // fixed entries: classes, channel stats, 3 generators, counters,
        // epoch sums, last test accuracy, epoch order
        let expected = 9 + names.len() * 2 + net.buffers().len();
        if c.entries.len() != expected {
            return Err(CliError::data(format!(
                "checkpoint has {} entries, the {} architecture needs {expected}",
                c.entries.len(),
                cfg.architecture.name()
            )));
        }
        let (_, s) = c.f64s("data/channel_stats")?;
        if s.len() != 2 * CHANNELS {
            return Err(CliError::data("data/channel_stats must hold 6 values"));
        }
        let stats = ChannelStats {
            mean: s[..CHANNELS].try_into().expect("3 values"),
            std: s[CHANNELS..].try_into().expect("3 values"),
        };
        let rng = |name: &str| -> Result<Prng> {
            match *c.u64s(name)? {
                [seed, a, b, cc, d] => {
                    Prng::from_state(seed, [a, b, cc, d]).map_err(|e| CliError::data(format!("{name}: {e}")))
                }
                _ => Err(CliError::data(format!("{name} must hold 5 words"))),
            }
        };
        let counters = c.u64s("counters")?;
        let [step, epoch, batch, correct, seen, steps] = *counters else {
            return Err(CliError::data("counters must hold 6 words"));
        };
        let (_, sums) = c.f64s("counters/epoch_sums")?;
        let (_, last) = c.f64s("counters/last_test_acc")?;
        let (&[loss_sum, penalty_sum], &[last]) = (sums, last) else {
            return Err(CliError::data("malformed epoch sums"));
        };
        let state = TrainState {
            net,
            optim: OptimState { momentum: cfg.momentum, velocity, step, epoch: epoch as usize },
            streams: Streams { shuffle: rng("rng/shuffle")?, augment: rng("rng/augment")?, noise: rng("rng/noise")? },
            stats,
            order: c.u64s("data/epoch_order")?.iter().map(|&i| i as usize).collect(),
            batch_in_epoch: batch as usize,
            acc: EpochAccum { loss_sum, penalty_sum, correct, seen, steps },
            last_test_acc: if last.is_nan() { None } else { Some(last) },
        };
        Ok((cfg, state))
    }
}

fn argmax_hits(logits: &Tensor, labels: &[usize]) -> u64 {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == y
        })
        .count() as u64
}

/// Top-1 accuracy with noise off, batchnorm on running statistics and conv
/// scales folded into the kernels.
pub fn evaluate(net: &Network, ds: &Dataset, stats: &ChannelStats, batch_size: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(CliError::data("evaluation set is empty"));
    }
    let folded = net.folded();
    let mut hits = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let images = normalize(chunk.iter().map(|&i| ds.records[i].pixels.as_slice()), ds.height, ds.width, stats)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.records[i].label as usize).collect();
        hits += argmax_hits(&folded.predict(&images)?, &labels);
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// Output files of one run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths { dir: dir.to_path_buf() }
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.resolved.cfg")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn steps(&self) -> PathBuf {
        self.dir.join("steps.csv")
    }
    pub fn timing(&self) -> PathBuf {
        self.dir.join("timing.csv")
    }
    pub fn divergence(&self) -> PathBuf {
        self.dir.join("divergence.txt")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.ckpt")
    }
    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch-{epoch:04}.ckpt"))
    }
    pub fn step_checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step-{step:08}.ckpt"))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub final_test_acc: f64,
    pub final_train_acc: f64,
    pub state: TrainState,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    paths: RunPaths,
    metrics: CsvLog,
    steps: Option<CsvLog>,
    timing: CsvLog,
    clock: Instant,
    recent: VecDeque<(u64, f64)>,
    rows: Vec<MetricsRow>,
}

const RECENT: usize = 50;

impl Run<'_> {
    fn step(&mut self, s: &mut TrainState, idx: &[usize], lr: f64) -> Result<()> {
        let cfg = self.cfg;
        let b = make_batch(self.train, idx, &s.stats, cfg.data.augmentation, &mut s.streams.augment)?;
        let (logits, cache) = s.net.forward(&b.images, Mode::Train, &mut s.streams.noise)?;
        let (loss, dlogits) = softmax_xent(&logits, &b.labels)?;
        let step = s.optim.step + 1;
        self.recent.push_back((step, loss));
        if self.recent.len() > RECENT {
            self.recent.pop_front();
        }
        if !loss.is_finite() {
            return Err(self.diverged(s, step, lr, &format!("loss is {loss}")));
        }
        let hits = argmax_hits(&logits, &b.labels);
        let (_, grads) = s.net.backward(&cache, &dlogits)?;
        s.net.absorb_batch_stats(&cache);
        let penalty = match cfg.method {
            Method::Msr => msr_update_pipeline(&mut s.net, &grads, &cfg.msr, cfg.czmg_order, &mut s.optim, lr),
            Method::BatchNormBaseline | Method::Plain => {
                baseline_l2_step(&mut s.net, &grads, cfg.weight_decay, &mut s.optim, lr)
            }
        };
        let penalty = match penalty {
            Ok(p) => p,
            Err(e @ msr_core::Error::DegenerateFilter { .. }) => {
                return Err(self.diverged(s, step, lr, &e.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let n = idx.len() as u64;
        s.acc.loss_sum += loss * n as f64;
        s.acc.penalty_sum += penalty;
        s.acc.correct += hits;
        s.acc.seen += n;
        s.acc.steps += 1;
        if let Some(log) = &mut self.steps {
            if step % cfg.log_every == 0 {
                log.row([
                    step.to_string(),
                    s.optim.epoch.to_string(),
                    lr.to_string(),
                    loss.to_string(),
                    (hits as f64 / n as f64).to_string(),
                    shift_diagnostics(&s.net, lr).max_slice_mean().to_string(),
                ])?;
            }
        }
        Ok(())
    }

    /// Writes the diagnostic dump and returns the divergence error.
    fn diverged(&self, s: &TrainState, step: u64, lr: f64, what: &str) -> CliError {
        let mut d = String::new();
        let _ = writeln!(d, "divergence at step {step} (epoch {}, lr {lr}): {what}", s.optim.epoch);
        let _ = writeln!(d, "\nrecent losses (step, loss):");
        for (st, l) in &self.recent {
            let _ = writeln!(d, "{st}, {l}");
        }
        let _ = writeln!(d, "\nparameters (name, shape, l2 norm, max abs, non-finite count):");
        for p in s.net.params() {
            let bad = p.tensor.data().iter().filter(|v| !v.is_finite()).count();
            let _ = writeln!(
                d,
                "{}, {:?}, {}, {}, {bad}",
                p.name,
                p.tensor.shape(),
                p.tensor.l2_norm(),
                p.tensor.max_abs()
            );
        }
        let written = fs::write(self.paths.divergence(), &d);
        let mut msg = format!("{what} at step {step}");
        if written.is_ok() {
            let _ = write!(msg, "; dump in {}", self.paths.divergence().display());
        }
        CliError::Divergence(msg)
    }

    fn epoch_row(&mut self, s: &mut TrainState, lr: f64, eval: bool) -> Result<()> {
        if eval {
            s.last_test_acc = Some(evaluate(&s.net, self.test, &s.stats, self.cfg.eval_batch_size)?);
        }
        let a = s.acc;
        let per_sample = |v: f64| if a.seen > 0 { v / a.seen as f64 } else { f64::NAN };
        let row = MetricsRow {
            epoch: s.optim.epoch,
            step: s.optim.step,
            lr,
            train_loss: per_sample(a.loss_sum),
            train_acc: per_sample(a.correct as f64),
            test_acc: if eval { s.last_test_acc } else { None },
            luma_loss: if a.steps > 0 { a.penalty_sum / a.steps as f64 } else { 0.0 },
            w_norm_mean: 0.0,
            w_norm_min: 0.0,
            w_norm_max: 0.0,
            v_norm_min: 0.0,
            v_norm_max: 0.0,
            max_slice_mean: 0.0,
            max_slice_mean_all: 0.0,
            eff_lr_mean: 0.0,
            eff_lr_max: 0.0,
            deflated: 0,
        }
        .with_diagnostics(&shift_diagnostics(&s.net, lr));
        self.metrics.metrics(&row)?;
        self.timing.row([
            row.epoch.to_string(),
            row.step.to_string(),
            format!("{:.3}", self.clock.elapsed().as_secs_f64()),
        ])?;
        self.rows.push(row);
        Ok(())
    }
}

fn save(s: &TrainState, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    s.to_checkpoint(cfg).save(path)
}

/// Trains from `state` until `cfg.epochs` (or `cfg.max_steps`) and writes
/// logs and checkpoints into `out_dir`.
pub fn run(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    mut s: TrainState,
    out_dir: &Path,
) -> Result<RunOutput> {
    if train.classes != s.classes() || test.classes != s.classes() {
        return Err(CliError::data(format!(
            "model has {} classes, data has {} (train) and {} (test)",
            s.classes(),
            train.classes,
            test.classes
        )));
    }
    let paths = RunPaths::new(out_dir);
    fs::create_dir_all(paths.checkpoints())?;
    fs::write(paths.config(), cfg.to_text())?;
    let mut r = Run {
        cfg,
        train,
        test,
        metrics: CsvLog::create(&paths.metrics(), &METRICS_HEADER)?,
        steps: if cfg.log_every > 0 { Some(CsvLog::create(&paths.steps(), &STEPS_HEADER)?) } else { None },
        timing: CsvLog::create(&paths.timing(), &TIMING_HEADER)?,
        paths,
        clock: Instant::now(),
        recent: VecDeque::new(),
        rows: Vec::new(),
    };
    let schedule = cfg.schedule();
    let limit = |s: &TrainState| cfg.max_steps > 0 && s.optim.step >= cfg.max_steps;
    let mut stopped = limit(&s);
    while s.optim.epoch < cfg.epochs && !stopped {
        let lr = schedule.lr_at(s.optim.epoch);
        if s.order.is_empty() {
            s.order = epoch_batches(train.len(), cfg.batch_size, &mut s.streams.shuffle, cfg.data.drop_last)?.concat();
            s.batch_in_epoch = 0;
        }
        let order = s.order.clone();
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        while s.batch_in_epoch < batches.len() {
            let idx = batches[s.batch_in_epoch];
            r.step(&mut s, idx, lr)?;
            s.batch_in_epoch += 1;
            if cfg.checkpoint_every_steps > 0 && s.optim.step % cfg.checkpoint_every_steps == 0 {
                save(&s, cfg, &r.paths.step_checkpoint(s.optim.step))?;
            }
            if limit(&s) {
                stopped = true;
                break;
            }
        }
        let epoch_done = s.batch_in_epoch >= batches.len();
        let last = stopped || s.optim.epoch + 1 == cfg.epochs;
        let eval = last || (cfg.eval_every > 0 && (s.optim.epoch + 1) % cfg.eval_every == 0);
        if epoch_done || s.acc.steps > 0 {
            r.epoch_row(&mut s, lr, eval)?;
        }
        if epoch_done {
            s.optim.epoch += 1;
            s.order.clear();
            s.batch_in_epoch = 0;
            s.acc = EpochAccum::default();
            if cfg.checkpoint_every > 0 && s.optim.epoch % cfg.checkpoint_every == 0 {
                save(&s, cfg, &r.paths.epoch_checkpoint(s.optim.epoch))?;
            }
        }
    }
    let final_test_acc = match s.last_test_acc {
        Some(a) => a,
        None => {
            let a = evaluate(&s.net, test, &s.stats, cfg.eval_batch_size)?;
            s.last_test_acc = Some(a);
            a
        }
    };
    save(&s, cfg, &r.paths.final_checkpoint())?;
    let final_train_acc = r.rows.last().map_or(f64::NAN, |row| row.train_acc);
    Ok(RunOutput { rows: r.rows, final_test_acc, final_train_acc, state: s })
}

/// Loads the data the config names, builds a fresh state and trains.
pub fn train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    let (train, test) = crate::dataset::load(&cfg.data)?;
    let state = TrainState::fresh(cfg, &train)?;
    run(cfg, &train, &test, state, out_dir)
}

/// Continues a run from a checkpoint; `overrides` may change run settings
/// such as the output directory or the epoch budget.
pub fn resume(checkpoint: &Path, overrides: &[(String, String)], out_dir: Option<&Path>) -> Result<RunOutput> {
    let (mut cfg, state) = TrainState::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    for (k, v) in overrides {
        cfg.set_dotted(k, v)?;
    }
    cfg.validate()?;
    let out = out_dir.map_or_else(|| cfg.out_dir.clone(), Path::to_path_buf);
    let (train, test) = crate::dataset::load(&cfg.data)?;
    run(&cfg, &train, &test, state, &out)
}
