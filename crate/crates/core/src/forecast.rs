//! Autoregressive ensemble generation.
//!
//! Member `m` of an ensemble over `J` model seeds runs on seed `m mod J` and
//! draws all of its noise from its own stream, so members are independent
//! given their seed and can be produced in any order.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{config, contract, Error, Result};
use crate::fgnnet::{predict_batch, ModelParams, TrajectoryWindow};
use crate::io;
use crate::rng::{self, StreamRng};
use crate::synthdata::{Dataset, Split};

pub const FORECAST_MAGIC: &[u8] = b"FGNFCST1\n";

/// Default lead horizon in frames.
pub const DEFAULT_LEAD_STEPS: usize = 15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub lead_steps: usize,
    pub master_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 16,
            lead_steps: DEFAULT_LEAD_STEPS,
            master_seed: 0,
        }
    }
}

impl EnsembleConfig {
    /// Checks the config against `seeds` model seeds.
    pub fn validate(&self, seeds: usize) -> Result<()> {
        if self.lead_steps == 0 {
            return Err(config("lead_steps must be at least 1"));
        }
        if self.members == 0 {
            return Err(config("members must be at least 1"));
        }
        if seeds == 0 {
            return Err(config("no model checkpoints"));
        }
        if !self.members.is_multiple_of(seeds) {
            return Err(config(format!(
                "{} members cannot be split equally over {seeds} model seeds",
                self.members
            )));
        }
        Ok(())
    }
}

/// One ensemble forecast from one initial window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    /// `[M, T, K]` in physical units.
    pub values: Tensor,
    /// Model `seed_id` of each member.
    pub member_seeds: Vec<u64>,
    /// Noise stream of each member.
    pub member_streams: Vec<u64>,
    /// `[M][T]` word position of each step's noise draw within the member's stream.
    pub noise_log: Vec<Vec<u64>>,
    /// Dataset frame holding `X^{t-1}` of the initial window.
    pub init_index: usize,
}

impl EnsembleForecast {
    pub fn members(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn lead_steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn sites(&self) -> usize {
        self.values.shape()[2]
    }

    /// Member `m` at lead `t` (0-based).
    pub fn state(&self, m: usize, t: usize) -> &[f64] {
        let (tt, k) = (self.lead_steps(), self.sites());
        let at = (m * tt + t) * k;
        &self.values.data()[at..at + k]
    }
}

/// Noise stream of member `member` for the forecast started at `init_index`.
pub fn member_stream(master_seed: u64, init_index: usize, member: usize) -> StreamRng {
    rng::stream(master_seed, init_index as u64, "forecast-noise", member as u64)
}

fn check_window(params: &ModelParams, init: &TrajectoryWindow) -> Result<()> {
    if init.sites() != params.config.sites {
        return Err(config(format!(
            "initial window has {} sites, model expects {}",
            init.sites(),
            params.config.sites
        )));
    }
    Ok(())
}

/// Rolls several members of one model forward together. Member `i` starts
/// from `init`, uses `rngs[i]` and returns its `[T·K]` trajectory plus the
/// word position of each step's noise draw.
fn rollout_members(
    params: &ModelParams,
    init: &TrajectoryWindow,
    lead_steps: usize,
    rngs: &mut [StreamRng],
) -> Result<Vec<(Vec<f64>, Vec<u64>)>> {
    check_window(params, init)?;
    let n = rngs.len();
    let k = init.sites();
    let nz = params.config.noise_len();
    let mut x2 = init.x_prev2.repeat(n);
    let mut x1 = init.x_prev1.repeat(n);
    let mut out: Vec<(Vec<f64>, Vec<u64>)> = (0..n)
        .map(|_| (Vec::with_capacity(lead_steps * k), Vec::with_capacity(lead_steps)))
        .collect();
    for t in 0..lead_steps {
        let mut z = Vec::with_capacity(n * nz);
        for (r, o) in rngs.iter_mut().zip(out.iter_mut()) {
            o.1.push(r.get_word_pos() as u64);
            z.extend(rng::normals(r, nz));
        }
        let next = predict_batch(params, &x2, &x1, &z)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { step: t + 1 });
        }
        for (i, o) in out.iter_mut().enumerate() {
            o.0.extend_from_slice(&next[i * k..(i + 1) * k]);
        }
        x2 = x1;
        x1 = next;
    }
    Ok(out)
}

/// Samples one trajectory `[T, K]`, drawing fresh noise from `rng` each step.
pub fn rollout(
    params: &ModelParams,
    init: &TrajectoryWindow,
    lead_steps: usize,
    rng: &mut StreamRng,
) -> Result<Tensor> {
    if lead_steps == 0 {
        return Err(contract("rollout needs at least one step"));
    }
    let mut rngs = [rng.clone()];
    let mut traj = rollout_members(params, init, lead_steps, &mut rngs)?;
    *rng = rngs[0].clone();
    let k = init.sites();
    Ok(Tensor::from_parts(vec![lead_steps, k], traj.remove(0).0))
}

/// Generates `cfg.members` members from `init`, allocated round-robin over
/// `models`.
pub fn generate_ensemble(
    cfg: &EnsembleConfig,
    models: &[ModelParams],
    init_index: usize,
    init: &TrajectoryWindow,
) -> Result<EnsembleForecast> {
    cfg.validate(models.len())?;
    let k = models[0].config.sites;
    if models.iter().any(|m| m.config.sites != k) {
        return Err(config("model checkpoints disagree on the number of sites"));
    }
    let j = models.len();
    let (m_total, t_len) = (cfg.members, cfg.lead_steps);
    let mut values = vec![0.0; m_total * t_len * k];
    let mut noise_log = vec![Vec::new(); m_total];
    for (s, model) in models.iter().enumerate() {
        let members: Vec<usize> = (s..m_total).step_by(j).collect();
        let mut rngs: Vec<StreamRng> = members
            .iter()
            .map(|&m| member_stream(cfg.master_seed, init_index, m))
            .collect();
        let trajs = rollout_members(model, init, t_len, &mut rngs)?;
        for (&m, (traj, log)) in members.iter().zip(trajs) {
            values[m * t_len * k..(m + 1) * t_len * k].copy_from_slice(&traj);
            noise_log[m] = log;
        }
    }
    Ok(EnsembleForecast {
        values: Tensor::from_parts(vec![m_total, t_len, k], values),
        member_seeds: (0..m_total).map(|m| models[m % j].seed_id).collect(),
        member_streams: (0..m_total as u64).collect(),
        noise_log,
        init_index,
    })
}

/// Evenly spaced init frames in `split` that leave room for the window and
/// `lead_steps` verifying frames.
pub fn select_inits(dataset: &Dataset, split: Split, count: usize, lead_steps: usize) -> Result<Vec<usize>> {
    let r = dataset.splits.range(split);
    if count == 0 {
        return Err(config("init count must be at least 1"));
    }
    if r.len() < lead_steps + 2 {
        return Err(config(format!(
            "{split:?} split of {} frames cannot hold a {}-step forecast",
            r.len(),
            lead_steps
        )));
    }
    let first = r.start + 1;
    let last = r.end - 1 - lead_steps;
    let avail = last - first + 1;
    if count > avail {
        return Err(config(format!(
            "{count} inits requested but only {avail} fit in the {split:?} split"
        )));
    }
    if count == 1 {
        return Ok(vec![first]);
    }
    Ok((0..count)
        .map(|i| first + i * (avail - 1) / (count - 1))
        .collect())
}

pub fn init_window(dataset: &Dataset, init_index: usize) -> Result<TrajectoryWindow> {
    if init_index == 0 || init_index >= dataset.len() {
        return Err(contract(format!("init frame {init_index} has no preceding frame")));
    }
    TrajectoryWindow::new(
        dataset.frame(init_index - 1).to_vec(),
        dataset.frame(init_index).to_vec(),
    )
}

/// Verifying frames `[T, K]` for a forecast started at `init_index`.
pub fn truth(dataset: &Dataset, init_index: usize, lead_steps: usize) -> Result<Tensor> {
    if init_index + lead_steps >= dataset.len() {
        return Err(contract(format!(
            "frames after {init_index} do not cover {lead_steps} lead steps"
        )));
    }
    let k = dataset.sites();
    let data = dataset.frames.data()[(init_index + 1) * k..(init_index + 1 + lead_steps) * k].to_vec();
    Ok(Tensor::from_parts(vec![lead_steps, k], data))
}

/// Ensemble forecasts for every init in `inits`, computed in parallel.
pub fn forecast_inits(
    cfg: &EnsembleConfig,
    models: &[ModelParams],
    dataset: &Dataset,
    inits: &[usize],
) -> Result<Vec<EnsembleForecast>> {
    inits
        .par_iter()
        .map(|&i| generate_ensemble(cfg, models, i, &init_window(dataset, i)?))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedKind {
    /// `sqrt(x_k² + x_{k+1}²)`.
    LocalSpeed,
    /// `x_k - x_{(k + K/4) mod K}`.
    LongRangeDiff,
}

impl FromStr for DerivedKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local_speed" => Ok(Self::LocalSpeed),
            "long_range_diff" => Ok(Self::LongRangeDiff),
            other => Err(config(format!("unknown derived quantity {other:?}"))),
        }
    }
}

/// Applies `kind` to every ring (trailing axis) of `values`.
pub fn derived_quantity(values: &Tensor, kind: DerivedKind) -> Result<Tensor> {
    let k = *values
        .shape()
        .last()
        .ok_or_else(|| contract("derived quantity of a scalar"))?;
    if k == 0 {
        return Err(contract("derived quantity of an empty ring"));
    }
    let mut out = Vec::with_capacity(values.len());
    for ring in values.data().chunks_exact(k) {
        for i in 0..k {
            out.push(match kind {
                DerivedKind::LocalSpeed => ring[i].hypot(ring[(i + 1) % k]),
                DerivedKind::LongRangeDiff => ring[i] - ring[(i + k / 4) % k],
            });
        }
    }
    Ok(Tensor::from_parts(values.shape().to_vec(), out))
}

/// Everything in a forecast file except the values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastHeader {
    pub config: EnsembleConfig,
    pub sites: usize,
    /// SHA-256 of each model checkpoint, in seed order.
    pub checkpoint_hashes: Vec<String>,
    pub dataset_hash: String,
    pub inits: Vec<InitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub init_index: usize,
    pub member_seeds: Vec<u64>,
    pub member_streams: Vec<u64>,
    pub noise_log: Vec<Vec<u64>>,
}

/// Writes forecasts from several inits to one file, values laid out
/// `[init, member, step, site]`.
pub fn save_forecasts(
    path: &Path,
    cfg: &EnsembleConfig,
    checkpoint_hashes: Vec<String>,
    dataset_hash: String,
    forecasts: &[EnsembleForecast],
) -> Result<()> {
    let sites = forecasts.first().map_or(0, EnsembleForecast::sites);
    let mut payload = Vec::new();
    let mut inits = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        if f.members() != cfg.members || f.lead_steps() != cfg.lead_steps || f.sites() != sites {
            return Err(contract("forecast shapes disagree with the ensemble config"));
        }
        payload.extend_from_slice(f.values.data());
        inits.push(InitRecord {
            init_index: f.init_index,
            member_seeds: f.member_seeds.clone(),
            member_streams: f.member_streams.clone(),
            noise_log: f.noise_log.clone(),
        });
    }
    let header = ForecastHeader {
        config: cfg.clone(),
        sites,
        checkpoint_hashes,
        dataset_hash,
        inits,
    };
    io::write_container(path, FORECAST_MAGIC, &header, &payload)
}

pub fn load_forecasts(path: &Path) -> Result<(ForecastHeader, Vec<EnsembleForecast>)> {
    let (h, payload): (ForecastHeader, Vec<f64>) = io::read_container(path, FORECAST_MAGIC)?;
    let per = h.config.members * h.config.lead_steps * h.sites;
    if payload.len() != per * h.inits.len() {
        return Err(Error::Corrupt(format!(
            "{}: payload size does not match the header",
            path.display()
        )));
    }
    let forecasts = h
        .inits
        .iter()
        .zip(payload.chunks_exact(per.max(1)))
        .map(|(r, chunk)| EnsembleForecast {
            values: Tensor::from_parts(
                vec![h.config.members, h.config.lead_steps, h.sites],
                chunk.to_vec(),
            ),
            member_seeds: r.member_seeds.clone(),
            member_streams: r.member_streams.clone(),
            noise_log: r.noise_log.clone(),
            init_index: r.init_index,
        })
        .collect();
    Ok((h, forecasts))
}
