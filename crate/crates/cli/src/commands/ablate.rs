use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use fgn_core::forecast::select_inits;
use fgn_core::synthdata::Split;
use fgn_core::training::{stage_file, MODEL_FILE};
use fgn_core::verify::{BootstrapConfig, VerifyConfig};
use fgn_core::{Dataset, EnsembleConfig, MetricsReport, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use super::forecast::{forecast_to_file, ForecastPlan};
use super::train::{combine_failures, record_seed_outputs, seed_dir, train_seeds, TrainCommandConfig};
use super::verify::{compare, load_climatology, verify_file, write_text, Comparison};
use crate::args::AblateArgs;
use crate::failure::{CliError, Context};
use crate::manifest::ManifestBuilder;
use crate::{default_out, load_config, num};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    /// `sites` is always taken from the dataset.
    pub model: ModelConfig,
    /// The first stage is the single-step stage; the rest fine-tune on rollouts.
    pub train: TrainConfig,
    pub seeds: usize,
    pub checkpoint_every: usize,
    pub ensemble: EnsembleConfig,
    pub inits: usize,
    pub split: Split,
    pub verify: VerifyConfig,
    pub bootstrap: BootstrapConfig,
    /// First lead of the lead-averaged comparisons.
    pub compare_from_lead: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: 4,
            checkpoint_every: 1000,
            ensemble: EnsembleConfig::default(),
            inits: 50,
            split: Split::Test,
            verify: VerifyConfig::default(),
            bootstrap: BootstrapConfig::default(),
            compare_from_lead: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub baseline: String,
    pub candidate: String,
    #[serde(flatten)]
    pub comparison: Comparison,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblateConfig,
    /// Configuration label → checkpoints whose members form its ensemble.
    pub configurations: BTreeMap<String, Vec<PathBuf>>,
    pub reports: BTreeMap<String, MetricsReport>,
    /// `candidate - baseline`, per lead and averaged over
    /// `compare_from_lead..=lead_steps`.
    pub comparisons: Vec<PairComparison>,
}

pub const SINGLE_STEP: &str = "a-single-step";
pub const AUTOREGRESSIVE: &str = "b-autoregressive";
pub const MULTI_SEED: &str = "c-multi-seed";

pub fn run(a: AblateArgs) -> Result<(), CliError> {
    let mut cfg: AblateConfig = load_config(a.config.as_deref())?;
    if let Some(f) = a.steps_scale {
        if !(f > 0.0 && f.is_finite()) {
            return Err(CliError::usage("--steps-scale must be positive"));
        }
        cfg.train = cfg.train.scaled(f);
    }
    if a.no_rev {
        cfg.verify.rev_quantiles.clear();
    }
    if cfg.seeds == 0 || cfg.train.stages.is_empty() {
        return Err(CliError::usage("ablation needs at least one seed and one stage"));
    }
    if cfg.verify.needs_climatology() && a.climatology.is_none() {
        return Err(CliError::usage(
            "REV needs climatological thresholds: pass --climatology <dataset> or --no-rev",
        ));
    }
    let t = cfg.ensemble.lead_steps;
    if cfg.compare_from_lead == 0 || cfg.compare_from_lead > t {
        return Err(CliError::usage(format!(
            "compare_from_lead = {} must lie in 1..={t}",
            cfg.compare_from_lead
        )));
    }
    cfg.ensemble.validate(cfg.seeds)?;
    cfg.ensemble.validate(1)?;
    let data = Dataset::load(&a.data).context(a.data.display())?;
    cfg.model.sites = data.sites();
    cfg.model.validate()?;
    cfg.train.validate()?;
    let inits = select_inits(&data, cfg.split, cfg.inits, t)?;
    let clim = match &a.climatology {
        Some(p) if cfg.verify.needs_climatology() => Some(load_climatology(p, &cfg.verify)?),
        _ => None,
    };

    let out = a.out.unwrap_or_else(|| default_out("ablate"));
    fs::create_dir_all(&out).context(out.display())?;
    let mut manifest = ManifestBuilder::new("ablate", cfg.train.master_seed, &cfg, &out)?;
    manifest.input(&a.data)?;
    if let Some(p) = &a.climatology {
        manifest.input(p)?;
    }

    let train_dir = out.join("train");
    let tcfg = TrainCommandConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        seeds: cfg.seeds,
        checkpoint_every: cfg.checkpoint_every,
    };
    let mut failures = Vec::new();
    for (seed, r) in train_seeds(&data, &tcfg, &train_dir, a.resume, None) {
        match r {
            Ok(_) => println!("seed {seed} trained"),
            Err(e) => failures.push((seed, e)),
        }
        record_seed_outputs(&mut manifest, &seed_dir(&train_dir, seed), &cfg.train)?;
    }
    if !failures.is_empty() {
        manifest.write(&out.join("manifest.json"))?;
        return combine_failures(failures);
    }

    let seed0 = seed_dir(&train_dir, 0);
    let mut configurations = BTreeMap::new();
    configurations.insert(
        SINGLE_STEP.to_string(),
        vec![seed0.join(stage_file(&cfg.train.stages[0].name))],
    );
    configurations.insert(AUTOREGRESSIVE.to_string(), vec![seed0.join(MODEL_FILE)]);
    configurations.insert(
        MULTI_SEED.to_string(),
        (0..cfg.seeds as u64)
            .map(|s| seed_dir(&train_dir, s).join(MODEL_FILE))
            .collect(),
    );

    let mut reports = BTreeMap::new();
    for (label, checkpoints) in &configurations {
        let path = out.join(format!("forecast-{label}.fgnf"));
        let plan = ForecastPlan {
            ensemble: cfg.ensemble.clone(),
            checkpoints: checkpoints.clone(),
            inits: inits.clone(),
        };
        forecast_to_file(&data, &a.data, &plan, &path)?;
        manifest.output(&path)?;
        let report = verify_file(&path, &data, &a.data, &cfg.verify, clim.as_ref())?;
        reports.insert(label.clone(), report);
    }

    let metrics: Vec<String> = reports[SINGLE_STEP].metrics.keys().cloned().collect();
    let mut comparisons = Vec::new();
    for (base, cand) in [
        (SINGLE_STEP, AUTOREGRESSIVE),
        (AUTOREGRESSIVE, MULTI_SEED),
        (SINGLE_STEP, MULTI_SEED),
    ] {
        let (rb, rc) = (&reports[base], &reports[cand]);
        for c in compare(rb, rc, &metrics, &cfg.bootstrap)? {
            // `compare` averages over every lead; this study averages from
            // `compare_from_lead` instead.
            if c.leads[0] != c.leads[1] {
                continue;
            }
            comparisons.push(PairComparison {
                baseline: base.into(),
                candidate: cand.into(),
                comparison: c,
            });
        }
        for m in &metrics {
            let leads = cfg.compare_from_lead..=t;
            comparisons.push(PairComparison {
                baseline: base.into(),
                candidate: cand.into(),
                comparison: Comparison {
                    metric: m.clone(),
                    leads: [*leads.start(), *leads.end()],
                    significance: fgn_core::verify::paired_significance_leads(rb, rc, m, leads, &cfg.bootstrap)?,
                },
            });
        }
    }

    let report = AblationReport {
        config: cfg.clone(),
        configurations,
        reports,
        comparisons,
    };
    let path = out.join("ablation.json");
    write_text(&path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    manifest.output(&path)?;
    manifest.write(&out.join("manifest.json"))?;

    println!("wrote {}", path.display());
    for (label, r) in &report.reports {
        println!(
            "{label} crps leads {}-{t} {}",
            cfg.compare_from_lead,
            num(r.lead_mean("crps", cfg.compare_from_lead..=t)?)
        );
    }
    for pc in report
        .comparisons
        .iter()
        .filter(|p| p.comparison.metric == "crps" && p.comparison.leads[0] != p.comparison.leads[1])
    {
        let s = &pc.comparison.significance;
        println!(
            "{} - {} crps mean {} interval [{}, {}]",
            pc.candidate,
            pc.baseline,
            num(s.mean_diff),
            num(s.lower),
            num(s.upper)
        );
    }
    Ok(())
}
