//! CRPS losses, AdamW, learning-rate schedules and staged training with
//! gradients through autoregressive rollouts.
//!
//! Each update draws its batch and noise from streams indexed by the global
//! update number, so an interrupted run resumed from its state checkpoint
//! retraces the uninterrupted one exactly.

mod crps;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use crps::{biased_crps, fair_crps};
pub use loss::{loss, loss_on_tape, LossConfig};
pub use optim::{adamw_step, global_norm, AdamWConfig, OptState};
pub use schedule::learning_rate;
pub use trainer::{
    batch_loss, loss_gradient, train_ensemble, train_run, train_stage, train_step, LogRecord, RunOptions,
    RunOutcome, stage_file, StageConfig, TrainConfig, TrainState, LOG_FILE, MODEL_FILE, STATE_FILE,
};
