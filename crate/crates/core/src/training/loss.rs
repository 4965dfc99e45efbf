use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{config, contract, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Noise samples drawn per target.
    pub n_samples: usize,
    /// Per-site weights `a_i`; empty means uniform.
    #[serde(default)]
    pub site_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            n_samples: 2,
            site_weights: Vec::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(config(format!(
                "n_samples = {} but the fair estimator needs at least 2",
                self.n_samples
            )));
        }
        if self.site_weights.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(config("site weights must be finite and non-negative"));
        }
        if !self.site_weights.is_empty() && self.site_weights.iter().all(|&a| a == 0.0) {
            return Err(config("site weights are all zero"));
        }
        Ok(())
    }

    /// The weights for a ring of `sites`, checking the length.
    pub fn weights(&self, sites: usize) -> Result<Vec<f64>> {
        if self.site_weights.is_empty() {
            return Ok(vec![1.0; sites]);
        }
        if self.site_weights.len() != sites {
            return Err(contract(format!(
                "{} site weights for {sites} sites",
                self.site_weights.len()
            )));
        }
        Ok(self.site_weights.clone())
    }
}

/// `(1/G) Σ_i a_i · fair_crps(predicted[:, i], targets[i])`.
pub fn loss(predicted: &Tensor, targets: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(predicted.clone());
    let t = tape.leaf(targets.clone());
    let out = loss_on_tape(&mut tape, p, t, cfg)?;
    Ok(tape.value(out).item())
}

/// Differentiable weighted loss over `[N, B·K]` predictions against `[B·K]`
/// targets; the per-ring values are averaged over the `B` rings.
pub fn loss_on_tape(tape: &mut Tape, predicted: Var, targets: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let shape = tape.value(predicted).shape().to_vec();
    if shape.len() != 2 || shape[0] != cfg.n_samples {
        return Err(contract(format!(
            "predictions of shape {shape:?} do not hold {} samples",
            cfg.n_samples
        )));
    }
    let m = shape[1];
    let sites = if cfg.site_weights.is_empty() {
        m
    } else {
        cfg.site_weights.len()
    };
    if !m.is_multiple_of(sites) {
        return Err(contract(format!(
            "{} site weights do not tile {m} targets",
            cfg.site_weights.len()
        )));
    }
    let weights = cfg.weights(sites)?;
    let per_site = tape.crps(predicted, targets, true)?;
    let tiled: Vec<f64> = weights.iter().copied().cycle().take(m).collect();
    let a = tape.leaf(Tensor::vector(tiled));
    let weighted = tape.mul(per_site, a)?;
    tape.reduce_mean(weighted, None)
}
