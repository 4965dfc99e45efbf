//! Stochastic Lorenz-96 ground truth.
//!
//! `dX_k/dt = (x_{k+1} - x_{k-2})·x_{k-1} - x_k + F` on a ring, integrated
//! with RK4 plus additive site-independent Gaussian forcing after every
//! integrator step. Frames are kept every `dt_frame`.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{config, contract, Error, Result};
use crate::io;
use crate::rng;

pub const DATASET_MAGIC: &[u8] = b"FGNDAT1\n";
/// Frames discarded from the start of every generated run.
pub const BURN_IN_FRAMES: usize = 1000;
const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub sites: usize,
    pub forcing: f64,
    pub dt_integrator: f64,
    pub dt_frame: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            sites: 40,
            forcing: 8.0,
            dt_integrator: 0.01,
            dt_frame: 0.1,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

// Negated comparisons below reject NaN along with out-of-range values.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
impl SystemConfig {
    /// Integrator steps per frame; errors unless `dt_frame / dt_integrator`
    /// is a positive integer.
    pub fn steps_per_frame(&self) -> Result<usize> {
        if !(self.dt_integrator > 0.0) || !(self.dt_frame > 0.0) {
            return Err(config("dt_integrator and dt_frame must be positive"));
        }
        let ratio = self.dt_frame / self.dt_integrator;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
            return Err(config(format!(
                "dt_frame / dt_integrator = {ratio} is not a positive integer"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 4 {
            return Err(config("sites: Lorenz-96 needs at least 4 sites"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(config("noise_std must be non-negative"));
        }
        if !self.forcing.is_finite() {
            return Err(config("forcing must be finite"));
        }
        self.steps_per_frame().map(|_| ())
    }
}

fn tendency(x: &[f64], forcing: f64, out: &mut [f64]) {
    let k = x.len();
    for i in 0..k {
        let xp1 = x[(i + 1) % k];
        let xm1 = x[(i + k - 1) % k];
        let xm2 = x[(i + k - 2) % k];
        out[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
    }
}

fn rk4_step(x: &mut [f64], forcing: f64, dt: f64, scratch: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = scratch;
    let n = x.len();
    tendency(x, forcing, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    tendency(tmp, forcing, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    tendency(tmp, forcing, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    tendency(tmp, forcing, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates from `x0` and returns `[n_frames, K]`; frame 0 is `x0`.
pub fn integrate(cfg: &SystemConfig, x0: &[f64], n_frames: usize) -> Result<Tensor> {
    cfg.validate()?;
    if x0.len() != cfg.sites {
        return Err(contract(format!(
            "initial state has {} sites, config has {}",
            x0.len(),
            cfg.sites
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(contract("initial state must be finite"));
    }
    let steps = cfg.steps_per_frame()?;
    let k = cfg.sites;
    let mut noise_rng = rng::stream(cfg.seed, 0, "system-forcing", 0);
    let noise_scale = cfg.noise_std * cfg.dt_integrator.sqrt();
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; k]);
    let mut x = x0.to_vec();
    let mut frames = Vec::with_capacity(n_frames * k);
    let mut step = 0usize;
    for f in 0..n_frames {
        if f > 0 {
            for _ in 0..steps {
                rk4_step(&mut x, cfg.forcing, cfg.dt_integrator, &mut scratch);
                if cfg.noise_std > 0.0 {
                    for (xi, e) in x.iter_mut().zip(rng::normals(&mut noise_rng, k)) {
                        *xi += noise_scale * e;
                    }
                }
                step += 1;
                if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
                    return Err(Error::IntegrationDiverged { step });
                }
            }
        }
        frames.extend_from_slice(&x);
    }
    Ok(Tensor::from_parts(vec![n_frames, k], frames))
}

/// Scalar normalization statistics of a training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
    /// Standard deviation of one-frame increments `x^t - x^{t-1}`.
    pub residual_std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
            residual_std: 1.0,
        }
    }

    /// Statistics of `frames` (`[T, K]`, time-major).
    pub fn from_frames(frames: &[f64], sites: usize) -> Result<Self> {
        if sites == 0 || frames.len() < 2 * sites || !frames.len().is_multiple_of(sites) {
            return Err(contract("normalization needs at least two whole frames"));
        }
        let n = frames.len() as f64;
        let mean = frames.iter().sum::<f64>() / n;
        let std = (frames.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let diffs: Vec<f64> = frames[sites..]
            .iter()
            .zip(frames)
            .map(|(b, a)| b - a)
            .collect();
        let dm = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let residual_std =
            (diffs.iter().map(|v| (v - dm).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        Ok(Self {
            mean,
            std,
            residual_std,
        })
    }

    pub fn hash(&self) -> String {
        io::hash_f64s(&[self.mean, self.std, self.residual_std])
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Chronological, contiguous, disjoint frame ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Valid => self.valid.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SystemConfig,
    /// `[T, K]` in physical units.
    pub frames: Tensor,
    /// Index of frame 0 in the underlying run (burn-in frames precede it).
    pub first_frame: usize,
    pub splits: Splits,
    pub stats: Normalization,
}

impl Dataset {
    pub fn sites(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn frame_time(&self, t: usize) -> f64 {
        (self.first_frame + t) as f64 * self.config.dt_frame
    }

    /// Flattened frames of one split.
    pub fn split_frames(&self, split: Split) -> &[f64] {
        let r = self.splits.range(split);
        let k = self.sites();
        &self.frames.data()[r.start * k..r.end * k]
    }
}

pub fn split_counts(n_frames: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let names = ["train", "valid", "test"];
    for (f, name) in fractions.iter().zip(names) {
        if !(*f >= 0.0 && *f <= 1.0) {
            return Err(config(format!(
                "split_fractions.{name} = {f} is outside [0, 1]"
            )));
        }
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(config(format!("split_fractions sum to {sum}, expected 1")));
    }
    let train = ((n_frames as f64 * fractions[0]).round() as usize).min(n_frames);
    let valid = ((n_frames as f64 * fractions[1]).round() as usize).min(n_frames - train);
    let test = n_frames - train - valid;
    Ok([train, valid, test])
}

/// Generates `n_frames` retained frames after a burn-in and splits them
/// chronologically: train earliest, test latest.
pub fn make_dataset(cfg: &SystemConfig, n_frames: usize, fractions: [f64; 3]) -> Result<Dataset> {
    cfg.validate()?;
    let [n_train, n_valid, n_test] = split_counts(n_frames, fractions)?;
    if n_train < 3 {
        return Err(config(format!(
            "n_frames = {n_frames} leaves {n_train} training frames; at least 3 are needed"
        )));
    }
    let mut x0 = vec![cfg.forcing; cfg.sites];
    x0[0] += 0.01;
    let run = integrate(cfg, &x0, BURN_IN_FRAMES + n_frames)?;
    let k = cfg.sites;
    let frames = Tensor::from_parts(
        vec![n_frames, k],
        run.data()[BURN_IN_FRAMES * k..].to_vec(),
    );
    let splits = Splits {
        train: 0..n_train,
        valid: n_train..n_train + n_valid,
        test: n_train + n_valid..n_train + n_valid + n_test,
    };
    let stats = Normalization::from_frames(&frames.data()[..n_train * k], k)?;
    Ok(Dataset {
        config: cfg.clone(),
        frames,
        first_frame: BURN_IN_FRAMES,
        splits,
        stats,
    })
}

/// JSON header of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: u32,
    pub config: SystemConfig,
    pub frames: usize,
    pub sites: usize,
    pub first_frame: usize,
    pub splits: Splits,
    pub stats: Normalization,
    pub stats_hash: String,
    pub checksum: String,
}

impl Dataset {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            format: 1,
            config: self.config.clone(),
            frames: self.len(),
            sites: self.sites(),
            first_frame: self.first_frame,
            splits: self.splits.clone(),
            stats: self.stats,
            stats_hash: self.stats.hash(),
            checksum: io::CHECKSUM_ALGORITHM.to_string(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        io::encode_container(DATASET_MAGIC, &self.header(), self.frames.data())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_container(path, DATASET_MAGIC, &self.header(), self.frames.data())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, frames): (DatasetHeader, Vec<f64>) = io::read_container(path, DATASET_MAGIC)?;
        let bad = |m: &str| Error::Corrupt(format!("{}: {m}", path.display()));
        if h.checksum != io::CHECKSUM_ALGORITHM {
            return Err(bad("unsupported checksum algorithm"));
        }
        if h.stats.hash() != h.stats_hash {
            return Err(bad("normalization statistics hash mismatch"));
        }
        if frames.len() != h.frames * h.sites || h.sites != h.config.sites {
            return Err(bad("frame blob length does not match header"));
        }
        if h.splits.test.end > h.frames {
            return Err(bad("splits exceed frame count"));
        }
        Ok(Self {
            config: h.config,
            frames: Tensor::from_parts(vec![h.frames, h.sites], frames),
            first_frame: h.first_frame,
            splits: h.splits,
            stats: h.stats,
        })
    }

    /// Reads the header without loading the frame blob.
    pub fn read_header(path: &Path) -> Result<DatasetHeader> {
        io::read_header(path, DATASET_MAGIC)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SystemConfig {
        SystemConfig {
            noise_std: 0.0,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn forcing_value_is_a_fixed_point() {
        let cfg = quiet();
        let run = integrate(&cfg, &vec![cfg.forcing; cfg.sites], 50).unwrap();
        assert!(run.data().iter().all(|&v| v == cfg.forcing));
    }

    #[test]
    fn deterministic_runs_are_bitwise_identical() {
        let cfg = quiet();
        let mut x0 = vec![8.0; 40];
        x0[3] += 0.1;
        let a = integrate(&cfg, &x0, 200).unwrap();
        let b = integrate(&cfg, &x0, 200).unwrap();
        assert_eq!(a, b);
        let noisy = SystemConfig::default();
        assert_eq!(integrate(&noisy, &x0, 100).unwrap(), integrate(&noisy, &x0, 100).unwrap());
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let cfg = SystemConfig {
            forcing: 8.0,
            dt_integrator: 0.5,
            dt_frame: 0.5,
            noise_std: 0.0,
            ..SystemConfig::default()
        };
        let mut x0 = vec![8.0; 40];
        x0[0] = 50.0;
        match integrate(&cfg, &x0, 1000) {
            Err(Error::IntegrationDiverged { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn frame_ratio_must_be_integral() {
        let cfg = SystemConfig {
            dt_frame: 0.105,
            ..SystemConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert_eq!(SystemConfig::default().steps_per_frame().unwrap(), 10);
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(10_000, [0.8, 0.1, 0.1]).unwrap(), [8000, 1000, 1000]);
        let err = split_counts(100, [0.8, 0.3, 0.1]).unwrap_err();
        assert!(err.to_string().contains("split_fractions"));
    }

    #[test]
    fn dataset_statistics_come_from_train_split() {
        let d = make_dataset(&SystemConfig::default(), 2000, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!(d.splits.train, 0..1600);
        assert_eq!(d.splits.valid, 1600..1800);
        assert_eq!(d.splits.test, 1800..2000);
        let train = d.split_frames(Split::Train);
        let n = train.len() as f64;
        let mean = train.iter().map(|&v| d.stats.normalize(v)).sum::<f64>() / n;
        let var = train
            .iter()
            .map(|&v| d.stats.normalize(v).powi(2))
            .sum::<f64>()
            / n
            - mean * mean;
        assert!(mean.abs() < 1e-10);
        assert!((var.sqrt() - 1.0).abs() < 1e-10);

        let k = d.sites();
        let diffs: Vec<f64> = (1..1600)
            .flat_map(|t| (0..k).map(move |s| (t, s)))
            .map(|(t, s)| d.frame(t)[s] - d.frame(t - 1)[s])
            .collect();
        let dm = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let rs = (diffs.iter().map(|v| (v - dm).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((rs - d.stats.residual_std).abs() < 1e-12);
    }

    #[test]
    fn too_few_frames_is_rejected() {
        assert!(make_dataset(&SystemConfig::default(), 2, [0.8, 0.1, 0.1]).is_err());
    }
}
