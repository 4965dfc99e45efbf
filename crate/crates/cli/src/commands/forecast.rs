use std::fs;
use std::path::{Path, PathBuf};

use fgn_core::fgnnet::load_checkpoint;
use fgn_core::forecast::{forecast_inits, save_forecasts, select_inits};
use fgn_core::synthdata::Split;
use fgn_core::{Dataset, EnsembleConfig, ModelParams};
use serde::Serialize;

use crate::args::ForecastArgs;
use crate::failure::{CliError, Context};
use crate::manifest::{file_hash, sidecar, ManifestBuilder};
use crate::{default_out, num};

pub(crate) fn parse_split(s: &str) -> Result<Split, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
        .map_err(|_| CliError::usage(format!("unknown split {s:?} (expected train, valid or test)")))
}

/// What a forecast run was asked to do; recorded in its manifest.
#[derive(Clone, Debug, Serialize)]
pub(crate) struct ForecastPlan {
    pub ensemble: EnsembleConfig,
    pub checkpoints: Vec<PathBuf>,
    pub inits: Vec<usize>,
}

pub(crate) fn load_models(paths: &[PathBuf], sites: usize) -> Result<Vec<ModelParams>, CliError> {
    let mut models = Vec::with_capacity(paths.len());
    for p in paths {
        let m = load_checkpoint(p).context(p.display())?;
        if m.config.sites != sites {
            return Err(CliError::usage(format!(
                "{}: model has {} sites but the dataset has {sites}",
                p.display(),
                m.config.sites
            )));
        }
        models.push(m);
    }
    Ok(models)
}

/// Forecasts every init in `plan` and writes the file plus its manifest.
pub(crate) fn forecast_to_file(
    data: &Dataset,
    data_path: &Path,
    plan: &ForecastPlan,
    out: &Path,
) -> Result<(), CliError> {
    plan.ensemble.validate(plan.checkpoints.len()).map_err(|e| {
        let mut c = CliError::from(e);
        c.message.push_str(" (every model seed must contribute the same number of members)");
        c
    })?;
    let models = load_models(&plan.checkpoints, data.sites())?;
    let base = out.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut manifest = ManifestBuilder::new("forecast", plan.ensemble.master_seed, plan, &base)?;
    manifest.input(data_path)?;
    let mut hashes = Vec::new();
    for p in &plan.checkpoints {
        manifest.input(p)?;
        hashes.push(file_hash(p)?);
    }
    let forecasts = forecast_inits(&plan.ensemble, &models, data, &plan.inits)?;
    if !base.as_os_str().is_empty() {
        fs::create_dir_all(&base).context(base.display())?;
    }
    save_forecasts(out, &plan.ensemble, hashes, file_hash(data_path)?, &forecasts).context(out.display())?;
    manifest.output(out)?;
    manifest.write(&sidecar(out))?;
    Ok(())
}

pub fn run(a: ForecastArgs) -> Result<(), CliError> {
    let data = Dataset::load(&a.data).context(a.data.display())?;
    let ensemble = EnsembleConfig {
        members: a.members,
        lead_steps: a.lead,
        master_seed: a.seed,
    };
    let inits = match a.init_list {
        Some(list) => {
            for &i in &list {
                if i == 0 || i + a.lead >= data.len() {
                    return Err(CliError::usage(format!(
                        "init frame {i} needs a preceding frame and {} following frames",
                        a.lead
                    )));
                }
            }
            list
        }
        None => select_inits(&data, parse_split(&a.split)?, a.inits.unwrap_or(50), a.lead)?,
    };
    let plan = ForecastPlan {
        ensemble,
        checkpoints: a.checkpoints,
        inits,
    };
    let out = a.out.unwrap_or_else(|| default_out("forecast.fgnf"));
    forecast_to_file(&data, &a.data, &plan, &out)?;
    println!("wrote {}", out.display());
    println!(
        "inits {} members {} lead_steps {} seeds {}",
        plan.inits.len(),
        plan.ensemble.members,
        plan.ensemble.lead_steps,
        plan.checkpoints.len()
    );
    println!("dt_frame {}", num(data.config.dt_frame));
    Ok(())
}
