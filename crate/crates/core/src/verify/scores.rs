use serde::{Deserialize, Serialize};

use super::EvalRun;
use crate::error::{config, Error, Result};
use crate::training::{biased_crps, fair_crps};

/// Per-lead aggregate plus the per-init values it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadSeries {
    /// Indexed by lead - 1.
    pub values: Vec<f64>,
    /// `[lead - 1][init]`.
    pub per_init: Vec<Vec<f64>>,
}

impl LeadSeries {
    fn from_per_init(per_init: Vec<Vec<f64>>) -> Self {
        let values = per_init
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        Self { values, per_init }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "width")]
pub enum Pooling {
    None,
    Avg(usize),
    Max(usize),
}

impl Pooling {
    pub fn name(&self) -> String {
        match self {
            Pooling::None => "crps".into(),
            Pooling::Avg(w) => format!("crps_avg_w{w}"),
            Pooling::Max(w) => format!("crps_max_w{w}"),
        }
    }
}

/// Circular windows of width `w` starting at each site, stride 1.
pub fn pool(field: &[f64], pooling: Pooling) -> Result<Vec<f64>> {
    let k = field.len();
    let w = match pooling {
        Pooling::None => return Ok(field.to_vec()),
        Pooling::Avg(w) | Pooling::Max(w) => w,
    };
    if w == 0 || w > k {
        return Err(config(format!("pool width {w} outside 1..={k}")));
    }
    Ok((0..k)
        .map(|s| {
            let window = (0..w).map(|j| field[(s + j) % k]);
            match pooling {
                Pooling::Max(_) => window.fold(f64::NEG_INFINITY, f64::max),
                _ => window.sum::<f64>() / w as f64,
            }
        })
        .collect())
}

/// Pooled ensemble CRPS per lead, averaged uniformly over sites then inits.
/// `fair` selects the unbiased estimator.
pub fn ensemble_crps(run: &EvalRun, pooling: Pooling, fair: bool) -> Result<LeadSeries> {
    let (m, k) = (run.members(), run.sites());
    if fair && m < 2 {
        return Err(config("fair CRPS needs at least 2 members"));
    }
    let score = if fair { fair_crps } else { biased_crps };
    let mut per_init = vec![Vec::with_capacity(run.inits()); run.leads()];
    for (t, out) in per_init.iter_mut().enumerate() {
        for i in 0..run.inits() {
            let pooled: Vec<Vec<f64>> = (0..m)
                .map(|mm| pool(run.member(i, mm, t), pooling))
                .collect::<Result<_>>()?;
            let truth = pool(run.truth(i, t), pooling)?;
            let mut sum = 0.0;
            let mut column = vec![0.0; m];
            for s in 0..k {
                for (c, p) in column.iter_mut().zip(&pooled) {
                    *c = p[s];
                }
                sum += score(&column, truth[s])?;
            }
            out.push(sum / k as f64);
        }
    }
    Ok(LeadSeries::from_per_init(per_init))
}

fn member_mean(run: &EvalRun, i: usize, t: usize) -> Vec<f64> {
    let m = run.members();
    let mut mean = vec![0.0; run.sites()];
    for mm in 0..m {
        for (a, v) in mean.iter_mut().zip(run.member(i, mm, t)) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    mean
}

/// Mean squared error of the ensemble mean, `[lead][init]`.
fn mean_sq_error(run: &EvalRun) -> Vec<Vec<f64>> {
    (0..run.leads())
        .map(|t| {
            (0..run.inits())
                .map(|i| {
                    let mean = member_mean(run, i, t);
                    mean.iter()
                        .zip(run.truth(i, t))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        / run.sites() as f64
                })
                .collect()
        })
        .collect()
}

/// RMSE of the ensemble mean. The aggregate is the root of the site- and
/// init-averaged squared error; per-init values are per-init RMSEs.
pub fn ensemble_mean_rmse(run: &EvalRun) -> LeadSeries {
    let mse = mean_sq_error(run);
    LeadSeries {
        values: mse
            .iter()
            .map(|v| (v.iter().sum::<f64>() / v.len() as f64).sqrt())
            .collect(),
        per_init: mse
            .into_iter()
            .map(|v| v.into_iter().map(f64::sqrt).collect())
            .collect(),
    }
}

/// Mean over sites of the unbiased member variance, `[lead][init]`.
fn mean_variance(run: &EvalRun) -> Vec<Vec<f64>> {
    let m = run.members();
    (0..run.leads())
        .map(|t| {
            (0..run.inits())
                .map(|i| {
                    let mean = member_mean(run, i, t);
                    let mut var = 0.0;
                    for mm in 0..m {
                        for (x, mu) in run.member(i, mm, t).iter().zip(&mean) {
                            var += (x - mu).powi(2);
                        }
                    }
                    var / ((m - 1) as f64 * run.sites() as f64)
                })
                .collect()
        })
        .collect()
}

fn ratio(var: f64, mse: f64, m: usize) -> Result<f64> {
    if mse == 0.0 {
        return Err(Error::Undefined("spread-skill ratio with zero RMSE".into()));
    }
    Ok(((m as f64 + 1.0) / m as f64 * var).sqrt() / mse.sqrt())
}

/// `sqrt((M+1)/M · mean member variance) / ensemble-mean RMSE` per lead.
/// Per-init values use the same formula on each init alone.
pub fn spread_skill(run: &EvalRun) -> Result<LeadSeries> {
    let m = run.members();
    if m < 2 {
        return Err(config("spread-skill needs at least 2 members"));
    }
    let var = mean_variance(run);
    let mse = mean_sq_error(run);
    let mut values = Vec::with_capacity(run.leads());
    let mut per_init = Vec::with_capacity(run.leads());
    for (v, e) in var.iter().zip(&mse) {
        let n = v.len() as f64;
        values.push(ratio(v.iter().sum::<f64>() / n, e.iter().sum::<f64>() / n, m)?);
        per_init.push(
            v.iter()
                .zip(e)
                .map(|(a, b)| ratio(*a, *b, m).unwrap_or(f64::NAN))
                .collect(),
        );
    }
    Ok(LeadSeries { values, per_init })
}
