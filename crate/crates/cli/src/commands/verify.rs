use std::fs;
use std::path::{Path, PathBuf};

use fgn_core::forecast::{load_forecasts, truth};
use fgn_core::verify::{
    climatology_levels, evaluate, paired_significance, paired_significance_leads, BootstrapConfig, Climatology,
    EvalRun, Significance, VerifyConfig,
};
use fgn_core::{Dataset, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::args::VerifyArgs;
use crate::failure::{CliError, Context};
use crate::manifest::{file_hash, sidecar, ManifestBuilder};
use crate::{default_out, load_config, num};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyCommandConfig {
    #[serde(flatten)]
    pub verify: VerifyConfig,
    pub bootstrap: BootstrapConfig,
}

/// Paired difference `forecast - baseline` of one metric over an
/// inclusive lead range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub leads: [usize; 2],
    pub significance: Significance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub forecast: String,
    pub baseline: String,
    pub bootstrap: BootstrapConfig,
    pub comparisons: Vec<Comparison>,
}

pub(crate) fn load_climatology(path: &Path, cfg: &VerifyConfig) -> Result<Climatology, CliError> {
    let clim = Dataset::load(path).context(path.display())?;
    Ok(Climatology::from_frames(
        clim.frames.data(),
        clim.sites(),
        &climatology_levels(cfg),
    )?)
}

/// Scores one forecast file against the frames of `data`.
pub(crate) fn verify_file(
    forecast: &Path,
    data: &Dataset,
    data_path: &Path,
    cfg: &VerifyConfig,
    clim: Option<&Climatology>,
) -> Result<MetricsReport, CliError> {
    let (header, forecasts) = load_forecasts(forecast).context(forecast.display())?;
    if header.sites != data.sites() {
        return Err(CliError::usage(format!(
            "{}: forecasts have {} sites but the dataset has {}",
            forecast.display(),
            header.sites,
            data.sites()
        )));
    }
    if header.dataset_hash != file_hash(data_path)? {
        return Err(CliError::usage(format!(
            "{} was produced from a different dataset than {}",
            forecast.display(),
            data_path.display()
        )));
    }
    let truths = forecasts
        .iter()
        .map(|f| truth(data, f.init_index, header.config.lead_steps))
        .collect::<fgn_core::Result<Vec<_>>>()?;
    let run = EvalRun::from_forecasts(&forecasts, truths)?;
    let mut run_ids = vec![file_hash(forecast)?];
    run_ids.extend(header.checkpoint_hashes.iter().cloned());
    Ok(evaluate(&run, cfg, clim, run_ids)?)
}

/// Every metric at every lead, plus each metric averaged over all leads.
pub(crate) fn compare(
    baseline: &MetricsReport,
    forecast: &MetricsReport,
    metrics: &[String],
    boot: &BootstrapConfig,
) -> Result<Vec<Comparison>, CliError> {
    if baseline.leads != forecast.leads {
        return Err(CliError::usage("forecast and baseline have different lead counts"));
    }
    let mut out = Vec::new();
    for m in metrics {
        for lead in 1..=forecast.leads {
            out.push(Comparison {
                metric: m.clone(),
                leads: [lead, lead],
                significance: paired_significance(baseline, forecast, m, lead, boot)?,
            });
        }
        out.push(Comparison {
            metric: m.clone(),
            leads: [1, forecast.leads],
            significance: paired_significance_leads(baseline, forecast, m, 1..=forecast.leads, boot)?,
        });
    }
    Ok(out)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).context(dir.display())?;
    }
    fs::write(path, text).context(path.display())
}

pub fn run(a: VerifyArgs) -> Result<(), CliError> {
    let mut cfg: VerifyCommandConfig = load_config(a.config.as_deref())?;
    if a.no_rev {
        cfg.verify.rev_quantiles.clear();
    }
    if cfg.verify.needs_climatology() && a.climatology.is_none() {
        return Err(CliError::usage(
            "REV needs climatological thresholds: pass --climatology <dataset> or --no-rev",
        ));
    }
    let data = Dataset::load(&a.data).context(a.data.display())?;
    let clim = match &a.climatology {
        Some(p) if cfg.verify.needs_climatology() => Some(load_climatology(p, &cfg.verify)?),
        _ => None,
    };
    let out = a.out.unwrap_or_else(|| default_out("report.json"));
    let base = out.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut manifest = ManifestBuilder::new("verify", cfg.bootstrap.seed, &cfg, &base)?;
    manifest.input(&a.forecast)?;
    manifest.input(&a.data)?;
    if let Some(p) = &a.climatology {
        manifest.input(p)?;
    }

    let report = verify_file(&a.forecast, &data, &a.data, &cfg.verify, clim.as_ref())?;
    write_text(&out, &report.to_json()?)?;
    manifest.output(&out)?;
    if a.csv {
        let csv = out.with_extension("csv");
        write_text(&csv, &report.to_csv())?;
        manifest.output(&csv)?;
    }
    if let Some(bp) = &a.baseline {
        manifest.input(bp)?;
        let base_report = verify_file(bp, &data, &a.data, &cfg.verify, clim.as_ref())?;
        let bpath = with_suffix(&out, ".baseline.json");
        write_text(&bpath, &base_report.to_json()?)?;
        manifest.output(&bpath)?;
        let metrics: Vec<String> = report.metrics.keys().cloned().collect();
        let file = ComparisonFile {
            forecast: a.forecast.display().to_string(),
            baseline: bp.display().to_string(),
            bootstrap: cfg.bootstrap,
            comparisons: compare(&base_report, &report, &metrics, &cfg.bootstrap)?,
        };
        let cpath = with_suffix(&out, ".comparison.json");
        write_text(&cpath, &(serde_json::to_string_pretty(&file)? + "\n"))?;
        manifest.output(&cpath)?;
        for c in file.comparisons.iter().filter(|c| c.metric == "crps" && c.leads[0] != c.leads[1]) {
            println!(
                "crps diff leads {}-{} mean {} interval [{}, {}]",
                c.leads[0],
                c.leads[1],
                num(c.significance.mean_diff),
                num(c.significance.lower),
                num(c.significance.upper)
            );
        }
    }
    manifest.write(&sidecar(&out))?;

    println!("wrote {}", out.display());
    println!("lead crps rmse spread_skill");
    for lead in 1..=report.leads {
        let ss = report
            .value("spread_skill", lead)
            .map(num)
            .unwrap_or_else(|_| "nan".into());
        println!(
            "{lead} {} {} {ss}",
            num(report.value("crps", lead)?),
            num(report.value("rmse", lead)?)
        );
    }
    Ok(())
}
