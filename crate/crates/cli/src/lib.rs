//! The `fgn` command line: data generation, training, forecasting,
//! verification and the ablation study, each recorded in a run manifest.

pub mod args;
mod commands;
mod failure;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

pub use args::{Cli, Command, OUT_ROOT_ENV};
pub use commands::ablate::{AblateConfig, AblationReport, PairComparison};
pub use commands::gen_data::GenDataConfig;
pub use commands::train::TrainCommandConfig;
pub use commands::verify::{Comparison, ComparisonFile};
pub use failure::{exit_code, CliError, EXIT_CORRUPT, EXIT_NUMERICAL, EXIT_USAGE};
pub use manifest::{RunManifest, sidecar};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Forecast(a) => commands::forecast::run(a),
        Command::Verify(a) => commands::verify::run(a),
        Command::Ablate(a) => commands::ablate::run(a),
    }
}

/// Default output location: `$FGN_OUT_ROOT/<name>`, or `fgn-out/<name>`.
pub fn default_out(name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fgn-out"));
    root.join(name)
}

/// Reads a JSON config, or the default when no path is given.
pub(crate) fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    use failure::Context;
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).context(p.display())?;
            serde_json::from_str(&text).context(p.display())
        }
    }
}

/// Formats a number with 17 significant digits.
pub(crate) fn num(x: f64) -> String {
    format!("{x:.16e}")
}
