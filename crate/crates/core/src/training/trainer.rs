use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_on_tape, LossConfig};
use super::optim::{adamw_step, AdamWConfig, OptState};
use super::schedule::learning_rate;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{config, contract, Error, Result};
use crate::fgnnet::{self, build_network, ModelConfig, ModelParams, NoiseSharing, ParamVars};
use crate::io;
use crate::rng::{self, StreamRng};
use crate::synthdata::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    pub rollout_len: usize,
    pub steps: usize,
    pub peak_lr: f64,
    pub warmup: usize,
}

impl StageConfig {
    pub fn new(name: impl Into<String>, rollout_len: usize, steps: usize, peak_lr: f64, warmup: usize) -> Self {
        Self {
            name: name.into(),
            rollout_len,
            steps,
            peak_lr,
            warmup,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub master_seed: u64,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
    pub stages: Vec<StageConfig>,
}

impl Default for TrainConfig {
    /// Single-step pre-training followed by autoregressive fine-tuning.
    fn default() -> Self {
        let mut cfg = Self::single_step();
        cfg.stages.extend(Self::ar_stages());
        cfg
    }
}

impl TrainConfig {
    pub fn single_step() -> Self {
        Self {
            batch_size: 16,
            master_seed: 0,
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
            stages: vec![StageConfig::new("single-step", 1, 20_000, 1e-3, 1_000)],
        }
    }

    /// Fine-tuning stages on rollouts of 1 to 8 steps.
    pub fn ar_stages() -> Vec<StageConfig> {
        let mut stages = vec![
            StageConfig::new("ar-1", 1, 2_000, 1e-4, 200),
            StageConfig::new("ar-2", 2, 1_000, 1e-4, 100),
        ];
        for r in 3..=8 {
            stages.push(StageConfig::new(format!("ar-{r}"), r, 250, 1e-5, 25));
        }
        stages
    }

    /// Multiplies every stage's step and warmup counts by `factor`, keeping
    /// at least one step per stage.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut cfg = self.clone();
        for s in &mut cfg.stages {
            s.steps = ((s.steps as f64 * factor).round() as usize).max(1);
            s.warmup = ((s.warmup as f64 * factor).round() as usize).min(s.steps);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        if self.stages.is_empty() {
            return Err(config("no training stages"));
        }
        for s in &self.stages {
            if s.rollout_len == 0 {
                return Err(config(format!("stage {}: rollout_len must be at least 1", s.name)));
            }
            if s.warmup > s.steps {
                return Err(config(format!(
                    "stage {}: warmup {} exceeds {} steps",
                    s.name, s.warmup, s.steps
                )));
            }
            if !(s.peak_lr.is_finite() && s.peak_lr >= 0.0) {
                return Err(config(format!("stage {}: bad peak_lr", s.name)));
            }
        }
        if self.stages.windows(2).any(|w| w[1].rollout_len < w[0].rollout_len) {
            return Err(config("rollout lengths must be nondecreasing across stages"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    pub fn hash(&self) -> String {
        io::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Global index of update `step` (0-based) within `stage`.
    fn global_step(&self, stage: usize, step: usize) -> u64 {
        (self.stages[..stage].iter().map(|s| s.steps).sum::<usize>() + step) as u64
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// 1-based update count over the whole run.
    pub step: u64,
    pub stage: String,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Seconds since the current process started training.
    pub wall_time: f64,
}

/// Everything needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt: OptState,
    /// Current stage index; equals the stage count when finished.
    pub stage: usize,
    /// Updates completed within the current stage.
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct Progress {
    stage: usize,
    step: usize,
    opt_step: u64,
    train_config_hash: String,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let opt = OptState::new(&params);
        Self {
            params,
            opt,
            stage: 0,
            step: 0,
        }
    }

    pub fn finished(&self, cfg: &TrainConfig) -> bool {
        self.stage >= cfg.stages.len()
    }

    pub fn global_step(&self, cfg: &TrainConfig) -> u64 {
        if self.finished(cfg) {
            cfg.total_steps() as u64
        } else {
            cfg.global_step(self.stage, self.step)
        }
    }

    pub fn save(&self, path: &Path, cfg: &TrainConfig) -> Result<()> {
        let progress = Progress {
            stage: self.stage,
            step: self.step,
            opt_step: self.opt.step,
            train_config_hash: cfg.hash(),
        };
        fgnnet::save_with_state(
            path,
            &self.params,
            Some(serde_json::to_value(progress)?),
            &self.opt.to_blobs(),
        )
    }

    pub fn load(path: &Path, cfg: &TrainConfig) -> Result<Self> {
        let (params, state, blobs) = fgnnet::load_with_state(path)?;
        let state = state.ok_or_else(|| Error::Corrupt(format!("{}: no training state", path.display())))?;
        let progress: Progress = serde_json::from_value(state)?;
        if progress.train_config_hash != cfg.hash() {
            return Err(config(format!(
                "{} was written under a different training config",
                path.display()
            )));
        }
        let opt = OptState::from_blobs(&blobs, progress.opt_step, &params)?;
        Ok(Self {
            params,
            opt,
            stage: progress.stage,
            step: progress.step,
        })
    }
}

/// Normalized windows and rollout targets for `B` start frames.
struct Batch {
    rings: usize,
    x2: Vec<f64>,
    x1: Vec<f64>,
    /// One `[B·K]` target per rollout step.
    targets: Vec<Vec<f64>>,
}

fn sample_batch(dataset: &Dataset, batch_size: usize, rollout: usize, rng: &mut StreamRng) -> Result<Batch> {
    let train = dataset.splits.train.clone();
    let span = rollout + 2;
    if train.len() < span {
        return Err(contract(format!(
            "training split of {} frames is shorter than a {span}-frame rollout window",
            train.len()
        )));
    }
    let norm = dataset.stats;
    let normed = |t: usize| dataset.frame(t).iter().map(|&v| norm.normalize(v)).collect::<Vec<_>>();
    let mut b = Batch {
        rings: batch_size,
        x2: Vec::new(),
        x1: Vec::new(),
        targets: vec![Vec::new(); rollout],
    };
    for _ in 0..batch_size {
        let t0 = rng.random_range(train.start..=train.end - span);
        b.x2.extend(normed(t0));
        b.x1.extend(normed(t0 + 1));
        for (r, tgt) in b.targets.iter_mut().enumerate() {
            tgt.extend(normed(t0 + 2 + r));
        }
    }
    Ok(b)
}

/// Records an `R`-step rollout of `n_samples` noise samples per batch element
/// and returns the step-averaged loss. Sample `s` of ring `b` lives at ring
/// index `s·B + b`.
fn record_rollout(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    batch: &Batch,
    loss_cfg: &LossConfig,
    noise: &mut StreamRng,
) -> Result<Var> {
    let cfg: &ModelConfig = &params.config;
    let layout = params.layout();
    let s = loss_cfg.n_samples;
    let rings = s * batch.rings;
    let noise_rows = match cfg.noise_sharing {
        NoiseSharing::Global => rings,
        NoiseSharing::PerSite => rings * cfg.sites,
    };
    let ratio = params.norm.residual_std / params.norm.std;
    let tile = |x: &[f64]| x.repeat(s);
    let mut x2 = tape.leaf(Tensor::vector(tile(&batch.x2)));
    let mut x1 = tape.leaf(Tensor::vector(tile(&batch.x1)));
    let mut total: Option<Var> = None;
    for target in &batch.targets {
        let z = tape.leaf(Tensor::new(
            vec![noise_rows, cfg.d_noise],
            rng::normals(noise, noise_rows * cfg.d_noise),
        )?);
        let net = build_network(tape, cfg, &layout, vars, rings, x2, x1, z)?;
        let inc = tape.scale_shift(net, ratio, 0.0);
        let next = tape.add(x1, inc)?;
        let pred = tape.reshape(next, &[s, target.len()])?;
        let tgt = tape.leaf(Tensor::vector(target.clone()));
        let l = loss_on_tape(tape, pred, tgt, loss_cfg)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
        x2 = x1;
        x1 = next;
    }
    let total = total.ok_or_else(|| contract("empty rollout"))?;
    Ok(tape.scale_shift(total, 1.0 / batch.targets.len() as f64, 0.0))
}

fn loss_and_grads(
    params: &ModelParams,
    batch: &Batch,
    loss_cfg: &LossConfig,
    noise: &mut StreamRng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params);
    let out = record_rollout(&mut tape, params, &vars, batch, loss_cfg, noise)?;
    let loss = tape.value(out).item();
    let grads = tape.backward(out)?;
    let g = vars.0.iter().map(|&v| grads.wrt(v).into_data()).collect();
    Ok((loss, g))
}

/// Loss on a reproducible batch drawn from the `batch_seed` streams, without
/// updating anything.
pub fn batch_loss(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    rollout_len: usize,
    batch_seed: u64,
) -> Result<f64> {
    let mut brng = rng::stream(cfg.master_seed, params.seed_id, "eval-batch", batch_seed);
    let mut nrng = rng::stream(cfg.master_seed, params.seed_id, "eval-noise", batch_seed);
    let batch = sample_batch(dataset, cfg.batch_size, rollout_len, &mut brng)?;
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params);
    let out = record_rollout(&mut tape, params, &vars, &batch, &cfg.loss, &mut nrng)?;
    Ok(tape.value(out).item())
}

/// Gradient of the training loss on one batch with respect to every
/// parameter tensor, in layout order.
pub fn loss_gradient(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    rollout_len: usize,
    batch_seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut brng = rng::stream(cfg.master_seed, params.seed_id, "eval-batch", batch_seed);
    let mut nrng = rng::stream(cfg.master_seed, params.seed_id, "eval-noise", batch_seed);
    let batch = sample_batch(dataset, cfg.batch_size, rollout_len, &mut brng)?;
    loss_and_grads(params, &batch, &cfg.loss, &mut nrng)
}

/// Performs the next update of the run and advances `state`.
pub fn train_step(state: &mut TrainState, dataset: &Dataset, cfg: &TrainConfig, clock: &Instant) -> Result<LogRecord> {
    if state.finished(cfg) {
        return Err(contract("training run already finished"));
    }
    if dataset.sites() != state.params.config.sites {
        return Err(contract(format!(
            "dataset has {} sites, model expects {}",
            dataset.sites(),
            state.params.config.sites
        )));
    }
    let stage = &cfg.stages[state.stage];
    let global = cfg.global_step(state.stage, state.step);
    let seed_id = state.params.seed_id;
    let mut brng = rng::stream(cfg.master_seed, seed_id, "batch", global);
    let mut nrng = rng::stream(cfg.master_seed, seed_id, "noise", global);
    let batch = sample_batch(dataset, cfg.batch_size, stage.rollout_len, &mut brng)?;
    let (loss, grads) = loss_and_grads(&state.params, &batch, &cfg.loss, &mut nrng)?;
    let diverged = || Error::TrainingDiverged {
        stage: stage.name.clone(),
        step: global + 1,
        last_good: None,
    };
    if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(diverged());
    }
    let lr = learning_rate(state.step + 1, stage.warmup, stage.steps, stage.peak_lr);
    let grad_norm = adamw_step(&mut state.params, &mut state.opt, &grads, lr, &cfg.optimizer)?;
    if state.params.tensors.iter().any(|t| !t.all_finite()) {
        return Err(diverged());
    }
    let record = LogRecord {
        step: global + 1,
        stage: stage.name.clone(),
        loss,
        lr,
        grad_norm,
        wall_time: clock.elapsed().as_secs_f64(),
    };
    state.step += 1;
    if state.step == stage.steps {
        state.params.provenance.push(stage.name.clone());
        state.stage += 1;
        state.step = 0;
    }
    Ok(record)
}

/// Runs every remaining update of `stage` from a fresh position in it.
pub fn train_stage(
    params: ModelParams,
    opt: OptState,
    dataset: &Dataset,
    cfg: &TrainConfig,
    stage: usize,
) -> Result<(ModelParams, OptState, Vec<LogRecord>)> {
    cfg.validate()?;
    if stage >= cfg.stages.len() {
        return Err(contract(format!("no stage {stage}")));
    }
    if !opt.matches(&params) {
        return Err(contract("optimizer state does not match the parameters"));
    }
    let mut state = TrainState {
        params,
        opt,
        stage,
        step: 0,
    };
    let clock = Instant::now();
    let mut log = Vec::with_capacity(cfg.stages[stage].steps);
    while state.stage == stage {
        log.push(train_step(&mut state, dataset, cfg, &clock)?);
    }
    Ok((state.params, state.opt, log))
}

/// Where and how often a run persists itself.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for `state.ckpt`, `log.jsonl` and `model.ckpt`.
    pub out_dir: Option<PathBuf>,
    /// Save the resumable state every this many updates (0: stage ends only).
    pub checkpoint_every: usize,
    /// Continue from `state.ckpt` if present.
    pub resume: bool,
    /// Stop cleanly once this many updates have been made in total.
    pub stop_after: Option<u64>,
}

pub const STATE_FILE: &str = "state.ckpt";
pub const LOG_FILE: &str = "log.jsonl";
pub const MODEL_FILE: &str = "model.ckpt";

/// Parameters as they stood at the end of the named stage.
pub fn stage_file(stage: &str) -> String {
    format!("stage-{stage}.ckpt")
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub params: ModelParams,
    pub completed: bool,
    /// Records produced by this invocation.
    pub log: Vec<LogRecord>,
}

fn trim_log(path: &Path, keep_through: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: LogRecord = serde_json::from_str(line)?;
        if rec.step <= keep_through {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

/// Trains one model seed through every stage of `cfg`.
pub fn train_run(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed_id: u64,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let state_path = opts.out_dir.as_ref().map(|d| d.join(STATE_FILE));
    let log_path = opts.out_dir.as_ref().map(|d| d.join(LOG_FILE));
    if let Some(d) = &opts.out_dir {
        fs::create_dir_all(d)?;
    }
    let mut state = match &state_path {
        Some(p) if opts.resume && p.exists() => {
            let s = TrainState::load(p, cfg)?;
            if s.params.config != *model_cfg || s.params.seed_id != seed_id {
                return Err(config(format!("{} belongs to a different model or seed", p.display())));
            }
            s
        }
        _ => TrainState::new(ModelParams::init(model_cfg, dataset.stats, cfg.master_seed, seed_id)?),
    };
    if let Some(lp) = &log_path {
        if opts.resume {
            trim_log(lp, state.global_step(cfg))?;
        } else {
            fs::write(lp, "")?;
        }
    }
    let mut log_file = match &log_path {
        Some(lp) => Some(fs::OpenOptions::new().append(true).create(true).open(lp)?),
        None => None,
    };
    let mut last_good = state_path.clone().filter(|p| p.exists() && opts.resume);
    let clock = Instant::now();
    let mut log = Vec::new();
    while !state.finished(cfg) {
        if opts.stop_after.is_some_and(|n| state.global_step(cfg) >= n) {
            break;
        }
        let rec = match train_step(&mut state, dataset, cfg, &clock) {
            Ok(r) => r,
            Err(Error::TrainingDiverged { stage, step, .. }) => {
                return Err(Error::TrainingDiverged {
                    stage,
                    step,
                    last_good,
                })
            }
            Err(e) => return Err(e),
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&rec)?)?;
        }
        let stage_done = state.step == 0;
        let periodic = opts.checkpoint_every > 0 && state.global_step(cfg) % opts.checkpoint_every as u64 == 0;
        if let Some(p) = &state_path {
            if stage_done || periodic {
                state.save(p, cfg)?;
                last_good = Some(p.clone());
            }
        }
        if let (true, Some(d)) = (stage_done, &opts.out_dir) {
            fgnnet::save_checkpoint(&d.join(stage_file(&rec.stage)), &state.params)?;
        }
        log.push(rec);
    }
    let completed = state.finished(cfg);
    if let Some(p) = &state_path {
        state.save(p, cfg)?;
    }
    if let (true, Some(d)) = (completed, &opts.out_dir) {
        fgnnet::save_checkpoint(&d.join(MODEL_FILE), &state.params)?;
    }
    Ok(RunOutcome {
        params: state.params,
        completed,
        log,
    })
}

/// Trains one independent run per entry of `seed_ids` (in parallel when
/// threads are available). Each seed writes under `out_root/seed-<id>`.
pub fn train_ensemble(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed_ids: &[u64],
    opts: &RunOptions,
) -> Vec<Result<ModelParams>> {
    seed_ids
        .par_iter()
        .map(|&seed| {
            let seed_opts = RunOptions {
                out_dir: opts.out_dir.as_ref().map(|d| d.join(format!("seed-{seed}"))),
                ..opts.clone()
            };
            let out = train_run(dataset, model_cfg, cfg, seed, &seed_opts)?;
            if !out.completed {
                return Err(contract(format!("seed {seed} stopped before finishing")));
            }
            Ok(out.params)
        })
        .collect()
}
