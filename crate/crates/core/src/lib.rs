//! Functional generative network (FGN) emulator for a stochastic ring-lattice
//! system.
//!
//! All ensemble variability of a model enters through one low-dimensional
//! noise vector per member and step, mapped by a single matrix to a
//! conditioning vector that modulates every conditional layer norm. Models
//! are trained on the fair CRPS of per-site marginals and verified with
//! marginal and joint-structure diagnostics.
//!
//! Module map:
//! - [`diffcore`]: reverse-mode differentiation engine.
//! - [`fgnnet`]: the network, its parameters and checkpoints.
//! - [`synthdata`]: stochastic Lorenz-96 ground truth and datasets.
//! - [`training`]: CRPS losses, AdamW, schedules, staged training.
//! - [`forecast`]: autoregressive ensemble generation.
//! - [`verify`]: verification metrics and paired significance.

pub mod diffcore;
pub mod error;
pub mod fgnnet;
pub mod forecast;
pub mod io;
pub mod rng;
pub mod synthdata;
pub mod training;
pub mod verify;

pub use diffcore::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use fgnnet::{ModelConfig, ModelParams, NoiseVector, TrajectoryWindow};
pub use forecast::{EnsembleConfig, EnsembleForecast};
pub use synthdata::{Dataset, SystemConfig};
pub use training::{LossConfig, TrainConfig};
pub use verify::MetricsReport;
