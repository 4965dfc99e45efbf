use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{config, contract, Result};
use crate::forecast::{derived_quantity, DerivedKind, EnsembleForecast};

/// Forecasts from many inits paired with their verifying truth.
#[derive(Clone, Debug)]
pub struct EvalRun {
    pub init_indices: Vec<usize>,
    /// Per init, `[M, T, K]`.
    pub forecasts: Vec<Tensor>,
    /// Per init, `[T, K]`.
    pub truths: Vec<Tensor>,
}

impl EvalRun {
    pub fn new(init_indices: Vec<usize>, forecasts: Vec<Tensor>, truths: Vec<Tensor>) -> Result<Self> {
        if forecasts.is_empty() {
            return Err(contract("evaluation needs at least one init"));
        }
        if forecasts.len() != truths.len() || forecasts.len() != init_indices.len() {
            return Err(contract("forecast, truth and init counts differ"));
        }
        let shape = forecasts[0].shape().to_vec();
        if shape.len() != 3 || shape.contains(&0) {
            return Err(contract(format!("forecast shape {shape:?} is not [M, T, K]")));
        }
        for (f, t) in forecasts.iter().zip(&truths) {
            if f.shape() != shape.as_slice() {
                return Err(config(format!(
                    "forecasts disagree in shape: {:?} vs {shape:?}",
                    f.shape()
                )));
            }
            if t.shape() != [shape[1], shape[2]] {
                return Err(config(format!(
                    "truth of shape {:?} does not match forecasts of shape {shape:?}",
                    t.shape()
                )));
            }
            if !f.all_finite() || !t.all_finite() {
                return Err(contract("evaluation data contains non-finite values"));
            }
        }
        Ok(Self {
            init_indices,
            forecasts,
            truths,
        })
    }

    pub fn from_forecasts(forecasts: &[EnsembleForecast], truths: Vec<Tensor>) -> Result<Self> {
        Self::new(
            forecasts.iter().map(|f| f.init_index).collect(),
            forecasts.iter().map(|f| f.values.clone()).collect(),
            truths,
        )
    }

    pub fn inits(&self) -> usize {
        self.forecasts.len()
    }

    pub fn members(&self) -> usize {
        self.forecasts[0].shape()[0]
    }

    pub fn leads(&self) -> usize {
        self.forecasts[0].shape()[1]
    }

    pub fn sites(&self) -> usize {
        self.forecasts[0].shape()[2]
    }

    /// Field of member `m` of init `i` at lead `t` (0-based).
    pub fn member(&self, i: usize, m: usize, t: usize) -> &[f64] {
        let (tt, k) = (self.leads(), self.sites());
        let at = (m * tt + t) * k;
        &self.forecasts[i].data()[at..at + k]
    }

    pub fn truth(&self, i: usize, t: usize) -> &[f64] {
        self.truths[i].row(t)
    }

    /// The same run with `kind` applied member-wise and to the truth.
    pub fn derived(&self, kind: DerivedKind) -> Result<Self> {
        Ok(Self {
            init_indices: self.init_indices.clone(),
            forecasts: self
                .forecasts
                .iter()
                .map(|f| derived_quantity(f, kind))
                .collect::<Result<_>>()?,
            truths: self
                .truths
                .iter()
                .map(|t| derived_quantity(t, kind))
                .collect::<Result<_>>()?,
        })
    }
}

/// Per-site climatological quantiles from a long truth run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub levels: Vec<f64>,
    /// `[level][site]`.
    pub thresholds: Vec<Vec<f64>>,
    pub samples: usize,
    /// Fraction of climatology samples beyond each threshold, `[level][site]`.
    pub exceedance: Vec<Vec<f64>>,
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Climatology {
    /// Quantiles at `levels` of `frames` (`[N, K]`, time-major).
    pub fn from_frames(frames: &[f64], sites: usize, levels: &[f64]) -> Result<Self> {
        if sites == 0 || frames.len() < 2 * sites || !frames.len().is_multiple_of(sites) {
            return Err(contract("climatology needs at least two whole frames"));
        }
        if levels.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(config("quantile levels must lie in [0, 1]"));
        }
        let n = frames.len() / sites;
        let columns: Vec<Vec<f64>> = (0..sites)
            .map(|k| {
                let mut c: Vec<f64> = (0..n).map(|t| frames[t * sites + k]).collect();
                c.sort_by(f64::total_cmp);
                c
            })
            .collect();
        let thresholds: Vec<Vec<f64>> = levels
            .iter()
            .map(|&q| columns.iter().map(|c| quantile_sorted(c, q)).collect())
            .collect();
        let exceedance = thresholds
            .iter()
            .map(|th| {
                columns
                    .iter()
                    .zip(th)
                    .map(|(c, &x)| c.iter().filter(|&&v| v > x).count() as f64 / n as f64)
                    .collect()
            })
            .collect();
        Ok(Self {
            levels: levels.to_vec(),
            thresholds,
            samples: n,
            exceedance,
        })
    }

    pub fn threshold(&self, level: f64) -> Result<&[f64]> {
        self.levels
            .iter()
            .position(|&q| q == level)
            .map(|i| self.thresholds[i].as_slice())
            .ok_or_else(|| config(format!("climatology has no {level} quantile")))
    }
}
