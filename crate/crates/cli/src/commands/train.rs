use std::fs;
use std::path::{Path, PathBuf};

use fgn_core::fgnnet::NoiseSharing;
use fgn_core::training::{stage_file, train_run, RunOptions, RunOutcome, LOG_FILE, MODEL_FILE, STATE_FILE};
use fgn_core::{Dataset, Error, ModelConfig, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{NoiseSharingArg, TrainArgs};
use crate::failure::{exit_code, CliError, Context, EXIT_NUMERICAL};
use crate::manifest::ManifestBuilder;
use crate::{default_out, load_config, num};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCommandConfig {
    /// `sites` is always taken from the dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Number of independently seeded models (seed ids `0..seeds`).
    pub seeds: usize,
    /// Save resumable state every this many updates.
    pub checkpoint_every: usize,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: 1,
            checkpoint_every: 1000,
        }
    }
}

pub(crate) fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Trains seeds `0..seeds` under `out/seed-<id>`. A failing seed does not
/// stop the others.
pub(crate) fn train_seeds(
    data: &Dataset,
    cfg: &TrainCommandConfig,
    out: &Path,
    resume: bool,
    stop_after: Option<u64>,
) -> Vec<(u64, fgn_core::Result<RunOutcome>)> {
    (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let opts = RunOptions {
                out_dir: Some(seed_dir(out, seed)),
                checkpoint_every: cfg.checkpoint_every,
                resume,
                stop_after,
            };
            (seed, train_run(data, &cfg.model, &cfg.train, seed, &opts))
        })
        .collect()
}

/// Hashes every checkpoint a seed directory holds and lists its log.
pub(crate) fn record_seed_outputs(
    manifest: &mut ManifestBuilder,
    dir: &Path,
    cfg: &TrainConfig,
) -> Result<(), CliError> {
    let mut names: Vec<String> = cfg.stages.iter().map(|s| stage_file(&s.name)).collect();
    names.push(STATE_FILE.into());
    names.push(MODEL_FILE.into());
    for name in names {
        let p = dir.join(name);
        if p.exists() {
            manifest.output(&p)?;
        }
    }
    let log = dir.join(LOG_FILE);
    if log.exists() {
        manifest.diagnostic(&log);
    }
    Ok(())
}

/// Folds per-seed failures into one error, preferring the numerical exit code.
pub(crate) fn combine_failures(failures: Vec<(u64, Error)>) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    let code = if failures.iter().any(|(_, e)| exit_code(e) == EXIT_NUMERICAL) {
        EXIT_NUMERICAL
    } else {
        exit_code(&failures[0].1)
    };
    let message = failures
        .iter()
        .map(|(s, e)| format!("seed {s}: {e}"))
        .collect::<Vec<_>>()
        .join("; ");
    Err(CliError { code, message })
}

pub fn run(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainCommandConfig = load_config(a.config.as_deref())?;
    if let Some(j) = a.seeds {
        cfg.seeds = j;
    }
    if let Some(n) = a.steps {
        for s in &mut cfg.train.stages {
            s.steps = n;
            s.warmup = s.warmup.min(n / 10);
        }
    }
    if a.single_step_only {
        cfg.train.stages.truncate(1);
    }
    if let Some(ns) = a.noise_sharing {
        cfg.model.noise_sharing = match ns {
            NoiseSharingArg::Global => NoiseSharing::Global,
            NoiseSharingArg::PerSite => NoiseSharing::PerSite,
        };
    }
    if let Some(s) = a.master_seed {
        cfg.train.master_seed = s;
    }
    if let Some(c) = a.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if cfg.seeds == 0 {
        return Err(CliError::usage("seeds must be at least 1"));
    }
    let data = Dataset::load(&a.data).context(a.data.display())?;
    cfg.model.sites = data.sites();
    cfg.model.validate()?;
    cfg.train.validate()?;

    let out = a.out.unwrap_or_else(|| default_out("train"));
    fs::create_dir_all(&out).context(out.display())?;
    let mut manifest = ManifestBuilder::new("train", cfg.train.master_seed, &cfg, &out)?;
    manifest.input(&a.data)?;
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }

    let results = train_seeds(&data, &cfg, &out, a.resume, a.stop_after);
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(o) => {
                let state = if o.completed { "done" } else { "stopped" };
                match o.log.last() {
                    Some(rec) => println!(
                        "seed {seed} {state} step {} stage {} loss {}",
                        rec.step,
                        rec.stage,
                        num(rec.loss)
                    ),
                    None => println!("seed {seed} {state}"),
                }
            }
            Err(e) => {
                eprintln!("seed {seed} failed: {e}");
                failures.push((seed, e));
            }
        }
        record_seed_outputs(&mut manifest, &seed_dir(&out, seed), &cfg.train)?;
    }
    manifest.write(&out.join("manifest.json"))?;
    combine_failures(failures)
}
