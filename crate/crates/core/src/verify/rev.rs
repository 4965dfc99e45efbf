use serde::{Deserialize, Serialize};

use super::EvalRun;
use crate::error::{config, contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Event: value above the threshold.
    Upper,
    /// Event: value below the threshold.
    Lower,
}

impl Tail {
    fn event(self, x: f64, threshold: f64) -> bool {
        match self {
            Tail::Upper => x > threshold,
            Tail::Lower => x < threshold,
        }
    }
}

/// Default cost/loss ratios.
pub fn default_cost_loss_grid() -> Vec<f64> {
    let mut g = vec![0.01, 0.02];
    g.extend((1..20).map(|i| i as f64 * 0.05));
    g.extend([0.98, 0.99]);
    g
}

/// Relative economic value from forecast probabilities and binary outcomes,
/// maximized over decision thresholds `p ∈ {0, 1/M, …, 1}` (protect when
/// `prob ≥ p`). `None` when the base rate is 0 or 1.
pub fn rev_from_probs(probs: &[f64], events: &[bool], members: usize, cost_loss: &[f64]) -> Result<Vec<Option<f64>>> {
    if probs.len() != events.len() || probs.is_empty() {
        return Err(contract("REV needs one probability per outcome"));
    }
    if members == 0 {
        return Err(contract("REV needs at least one member"));
    }
    if cost_loss.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(config("cost/loss ratios must lie in (0, 1)"));
    }
    let n = probs.len() as f64;
    let base = events.iter().filter(|&&e| e).count() as f64 / n;
    if base == 0.0 || base == 1.0 {
        return Ok(vec![None; cost_loss.len()]);
    }
    // (hits + false alarms, misses) per decision threshold
    let tables: Vec<(f64, f64)> = (0..=members)
        .map(|j| {
            let p = j as f64 / members as f64;
            let mut protect = 0usize;
            let mut misses = 0usize;
            for (&q, &e) in probs.iter().zip(events) {
                if q >= p - 1e-12 {
                    protect += 1;
                } else if e {
                    misses += 1;
                }
            }
            (protect as f64 / n, misses as f64 / n)
        })
        .collect();
    Ok(cost_loss
        .iter()
        .map(|&r| {
            let e_clim = r.min(base);
            let e_perf = r * base;
            tables
                .iter()
                .map(|&(protect, miss)| (e_clim - (r * protect + miss)) / (e_clim - e_perf))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .map(Some)
        .collect())
}

/// REV curve per lead for events beyond per-site `thresholds`, pooling all
/// inits and sites of a lead into one contingency table.
pub fn rev(
    run: &EvalRun,
    thresholds: &[f64],
    tail: Tail,
    cost_loss: &[f64],
) -> Result<Vec<Vec<Option<f64>>>> {
    let (m, k) = (run.members(), run.sites());
    if thresholds.len() != k {
        return Err(config(format!(
            "{} climatology thresholds for {k} sites",
            thresholds.len()
        )));
    }
    (0..run.leads())
        .map(|t| {
            let mut probs = Vec::with_capacity(run.inits() * k);
            let mut events = Vec::with_capacity(run.inits() * k);
            for i in 0..run.inits() {
                let truth = run.truth(i, t);
                for s in 0..k {
                    let hits = (0..m)
                        .filter(|&mm| tail.event(run.member(i, mm, t)[s], thresholds[s]))
                        .count();
                    probs.push(hits as f64 / m as f64);
                    events.push(tail.event(truth[s], thresholds[s]));
                }
            }
            rev_from_probs(&probs, &events, m, cost_loss)
        })
        .collect()
}
