use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::rev::{default_cost_loss_grid, rev, Tail};
use super::scores::{ensemble_crps, ensemble_mean_rmse, spread_skill, LeadSeries, Pooling};
use super::spectrum::{power_spectrum, Spectra};
use super::{Climatology, EvalRun};
use crate::error::{config, Result};
use crate::forecast::DerivedKind;
use crate::io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub pool_widths: Vec<usize>,
    /// Use the fair CRPS estimator instead of the biased one.
    pub fair: bool,
    pub rev_quantiles: Vec<f64>,
    pub rev_tails: Vec<Tail>,
    pub cost_loss: Vec<f64>,
    pub derived: Vec<DerivedKind>,
    pub spectra: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            pool_widths: vec![1, 2, 4, 8, 16],
            fair: false,
            rev_quantiles: vec![0.9, 0.99, 0.999],
            rev_tails: vec![Tail::Upper, Tail::Lower],
            cost_loss: default_cost_loss_grid(),
            derived: vec![DerivedKind::LocalSpeed, DerivedKind::LongRangeDiff],
            spectra: true,
        }
    }
}

impl VerifyConfig {
    pub fn needs_climatology(&self) -> bool {
        !self.rev_quantiles.is_empty() && !self.rev_tails.is_empty()
    }

    pub fn hash(&self) -> String {
        io::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub value: f64,
    pub per_init: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevCurve {
    /// Climatological quantile level of the event threshold.
    pub quantile: f64,
    pub tail: Tail,
    pub lead: usize,
    pub cost_loss: Vec<f64>,
    /// `None` where the event base rate is degenerate.
    pub value: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub run_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub members: usize,
    pub leads: usize,
    pub sites: usize,
    pub init_indices: Vec<usize>,
    /// metric → lead (1-based) → value and per-init values.
    pub metrics: BTreeMap<String, BTreeMap<usize, MetricEntry>>,
    pub rev: Vec<RevCurve>,
    pub spectra: Option<Spectra>,
}

impl MetricsReport {
    fn insert(&mut self, name: String, series: LeadSeries) {
        let by_lead = series
            .values
            .into_iter()
            .zip(series.per_init)
            .enumerate()
            .map(|(t, (value, per_init))| (t + 1, MetricEntry { value, per_init }))
            .collect();
        self.metrics.insert(name, by_lead);
    }

    pub fn entry(&self, metric: &str, lead: usize) -> Result<&MetricEntry> {
        self.metrics
            .get(metric)
            .and_then(|m| m.get(&lead))
            .ok_or_else(|| config(format!("report has no {metric} at lead {lead}")))
    }

    pub fn value(&self, metric: &str, lead: usize) -> Result<f64> {
        Ok(self.entry(metric, lead)?.value)
    }

    pub fn per_init(&self, metric: &str, lead: usize) -> Result<&[f64]> {
        Ok(&self.entry(metric, lead)?.per_init)
    }

    /// Mean of the aggregate values over `leads`.
    pub fn lead_mean(&self, metric: &str, leads: std::ops::RangeInclusive<usize>) -> Result<f64> {
        let vals: Vec<f64> = leads.map(|l| self.value(metric, l)).collect::<Result<_>>()?;
        if vals.is_empty() {
            return Err(config("empty lead range"));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Long-format CSV `metric,lead,init,value`; `init` is `all` for the
    /// aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,lead,init,value\n");
        for (name, by_lead) in &self.metrics {
            for (lead, e) in by_lead {
                let _ = writeln!(out, "{name},{lead},all,{:.16e}", e.value);
                for (i, v) in self.init_indices.iter().zip(&e.per_init) {
                    let _ = writeln!(out, "{name},{lead},{i},{v:.16e}");
                }
            }
        }
        out
    }
}

/// Runs the whole battery. REV curves need `climatology` unless the config
/// disables them.
pub fn evaluate(
    run: &EvalRun,
    cfg: &VerifyConfig,
    climatology: Option<&Climatology>,
    run_ids: Vec<String>,
) -> Result<MetricsReport> {
    if cfg.needs_climatology() && climatology.is_none() {
        return Err(config("REV requested but no climatology supplied"));
    }
    let mut report = MetricsReport {
        provenance: Provenance {
            config_hash: cfg.hash(),
            run_ids,
        },
        members: run.members(),
        leads: run.leads(),
        sites: run.sites(),
        init_indices: run.init_indices.clone(),
        metrics: BTreeMap::new(),
        rev: Vec::new(),
        spectra: None,
    };
    report.insert(Pooling::None.name(), ensemble_crps(run, Pooling::None, cfg.fair)?);
    for &w in &cfg.pool_widths {
        for p in [Pooling::Avg(w), Pooling::Max(w)] {
            report.insert(p.name(), ensemble_crps(run, p, cfg.fair)?);
        }
    }
    report.insert("rmse".into(), ensemble_mean_rmse(run));
    if run.members() >= 2 {
        report.insert("spread_skill".into(), spread_skill(run)?);
    }
    for &kind in &cfg.derived {
        let d = run.derived(kind)?;
        let name = match kind {
            DerivedKind::LocalSpeed => "local_speed",
            DerivedKind::LongRangeDiff => "long_range_diff",
        };
        report.insert(format!("{name}_crps"), ensemble_crps(&d, Pooling::None, cfg.fair)?);
    }
    if let (true, Some(clim)) = (cfg.needs_climatology(), climatology) {
        for &q in &cfg.rev_quantiles {
            for &tail in &cfg.rev_tails {
                let level = match tail {
                    Tail::Upper => q,
                    Tail::Lower => 1.0 - q,
                };
                let th = clim.threshold(level)?;
                for (t, value) in rev(run, th, tail, &cfg.cost_loss)?.into_iter().enumerate() {
                    report.rev.push(RevCurve {
                        quantile: level,
                        tail,
                        lead: t + 1,
                        cost_loss: cfg.cost_loss.clone(),
                        value,
                    });
                }
            }
        }
    }
    if cfg.spectra {
        report.spectra = Some(power_spectrum(run)?);
    }
    Ok(report)
}

/// Quantile levels a climatology must hold for `cfg`'s REV thresholds.
pub fn climatology_levels(cfg: &VerifyConfig) -> Vec<f64> {
    let mut levels = Vec::new();
    for &q in &cfg.rev_quantiles {
        for &tail in &cfg.rev_tails {
            let l = match tail {
                Tail::Upper => q,
                Tail::Lower => 1.0 - q,
            };
            if !levels.contains(&l) {
                levels.push(l);
            }
        }
    }
    levels
}
