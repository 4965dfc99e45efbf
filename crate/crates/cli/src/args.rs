use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the directory that receives outputs whose
/// path is not given explicitly.
pub const OUT_ROOT_ENV: &str = "FGN_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "fgn", version, about = "Functional generative network ensemble emulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the stochastic ring system and write a dataset file.
    GenData(GenDataArgs),
    /// Train one or more independently seeded models.
    Train(TrainArgs),
    /// Generate ensemble forecasts from trained checkpoints.
    Forecast(ForecastArgs),
    /// Score forecasts against the dataset truth.
    Verify(VerifyArgs),
    /// Single-step vs autoregressive vs multi-seed comparison.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON config (`system`, `frames`, `split_fractions`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub forcing: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NoiseSharingArg {
    Global,
    PerSite,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON config (`model`, `train`, `seeds`, `checkpoint_every`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of independently seeded models.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Replace the step count of every stage.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Keep only the first (single-step) stage.
    #[arg(long)]
    pub single_step_only: bool,
    #[arg(long)]
    pub noise_sharing: Option<NoiseSharingArg>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from the state checkpoints in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many updates per seed (the run can be resumed).
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model checkpoints, one per seed.
    #[arg(long = "checkpoint", value_delimiter = ',', required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Number of evenly spaced inits in the split.
    #[arg(long, conflicts_with = "init_list")]
    pub inits: Option<usize>,
    /// Explicit init frames, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub init_list: Option<Vec<usize>>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 16)]
    pub members: usize,
    #[arg(long, default_value_t = fgn_core::forecast::DEFAULT_LEAD_STEPS)]
    pub lead: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub forecast: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset of a separate long run used for climatological thresholds.
    #[arg(long)]
    pub climatology: Option<PathBuf>,
    /// JSON verification config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip relative economic value (no climatology needed).
    #[arg(long)]
    pub no_rev: bool,
    /// Second forecast file to compare against, init by init.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a long-format CSV next to the JSON report.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub climatology: Option<PathBuf>,
    /// JSON config (`model`, `train`, `seeds`, `ensemble`, `inits`, `verify`, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multiply every stage's step count.
    #[arg(long)]
    pub steps_scale: Option<f64>,
    #[arg(long)]
    pub no_rev: bool,
    #[arg(long)]
    pub resume: bool,
}
