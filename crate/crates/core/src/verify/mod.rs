//! Verification of ensemble forecasts against truth over many init times:
//! marginal skill, calibration, relative economic value, pooled
//! (joint-structure) CRPS, derived quantities, spectra and paired
//! block-bootstrap significance.
//!
//! Every aggregate keeps its per-init values so that two reports over the
//! same inits can be compared with [`paired_significance`].

mod report;
mod rev;
mod run;
mod scores;
mod significance;
mod spectrum;

pub use report::{climatology_levels, evaluate, MetricEntry, MetricsReport, Provenance, RevCurve, VerifyConfig};
pub use rev::{default_cost_loss_grid, rev, rev_from_probs, Tail};
pub use run::{quantile_sorted, Climatology, EvalRun};
pub use scores::{ensemble_crps, ensemble_mean_rmse, pool, spread_skill, LeadSeries, Pooling};
pub use significance::{
    block_bootstrap, paired_significance, paired_significance_leads, BootstrapConfig, Significance,
};
pub use spectrum::{power_spectrum, ring_spectrum, Spectra};
