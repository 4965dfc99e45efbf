//! Ensemble CRPS estimators for one scalar target.
//!
//! Both use the pair-sum identity over sorted samples,
//! `Σ_{n,n'} |x_n - x_n'| = 2 Σ_i (2i - N + 1) x_(i)`, so they run in
//! `O(N log N)`.

use crate::error::{contract, Result};

fn skill_and_pair_sum(samples: &[f64], y: f64) -> (f64, f64) {
    let skill: f64 = samples.iter().map(|x| (x - y).abs()).sum();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let pairs: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum();
    (skill, 2.0 * pairs)
}

/// Unbiased ("fair") estimator with pair weight `1 / (2N(N-1))`.
pub fn fair_crps(samples: &[f64], y: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(contract(format!(
            "fair CRPS needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let (skill, pairs) = skill_and_pair_sum(samples, y);
    Ok(skill / n - pairs / (2.0 * n * (n - 1.0)))
}

/// CRPS of the empirical distribution, pair weight `1 / (2N²)`.
pub fn biased_crps(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(contract("CRPS of an empty ensemble"));
    }
    let n = samples.len() as f64;
    let (skill, pairs) = skill_and_pair_sum(samples, y);
    Ok(skill / n - pairs / (2.0 * n * n))
}
