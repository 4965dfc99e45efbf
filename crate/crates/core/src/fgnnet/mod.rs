//! The FGN model on a ring lattice.
//!
//! encoder → `n_layers` × (conditional-norm → mixer → conditional-norm → MLP)
//! → conditional-norm → decoder. A single noise vector per forward pass is
//! mapped by one matrix to a conditioning vector `c`; every conditional norm
//! derives its own `(gamma, beta)` from that same `c`, shared over all sites.
//! Sampling `z` therefore samples the effective network parameters.

mod checkpoint;
mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};

pub use checkpoint::{
    load as load_checkpoint, load_with_state, read_checkpoint_header, save as save_checkpoint,
    save_with_state, CheckpointHeader, NamedBlob, CHECKPOINT_MAGIC,
};
pub use model::{forward, noise_jacobian, predict_batch, sample_member_step, site_features};
pub(crate) use model::{build_network, ParamVars};
pub use params::{param_count, ModelParams, ParamKind, ParamLayout, ParamSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessorKind {
    Attention,
    MlpMessagePassing,
}

/// How a forward pass consumes noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSharing {
    /// One noise vector per forward pass, shared by every site.
    Global,
    /// An independent noise vector per site (spatially independent control).
    PerSite,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub sites: usize,
    pub d_latent: usize,
    pub n_layers: usize,
    pub d_noise: usize,
    pub d_cond: usize,
    /// Half-width of the attention / message-passing neighbourhood.
    pub window: usize,
    pub heads: usize,
    pub processor: ProcessorKind,
    pub noise_sharing: NoiseSharing,
    /// Append sin/cos of the site angle to the inputs. Breaks exact rotation
    /// equivariance, so it is off by default.
    pub site_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sites: 40,
            d_latent: 64,
            n_layers: 4,
            d_noise: 32,
            d_cond: 32,
            window: 2,
            heads: 4,
            processor: ProcessorKind::Attention,
            noise_sharing: NoiseSharing::Global,
            site_features: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.sites >= 1, "sites must be at least 1"),
            (self.d_latent >= 1, "d_latent must be at least 1"),
            (self.n_layers >= 1, "n_layers must be at least 1"),
            (self.d_noise >= 1, "d_noise must be at least 1"),
            (self.d_cond >= 1, "d_cond must be at least 1"),
            (self.window >= 1, "window must be at least 1"),
            (self.heads >= 1, "heads must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(config(msg));
            }
        }
        if !self.d_latent.is_multiple_of(self.heads) {
            return Err(config(format!(
                "d_latent = {} is not divisible by heads = {}",
                self.d_latent, self.heads
            )));
        }
        Ok(())
    }

    /// Input channels per site before neighbourhood gathering.
    pub fn input_channels(&self) -> usize {
        if self.site_features {
            4
        } else {
            2
        }
    }

    /// Neighbour offsets used by the encoder and message passing.
    pub fn stencil(&self) -> Vec<isize> {
        let w = self.window as isize;
        (-w..=w).collect()
    }

    /// Number of noise draws one forward pass consumes.
    pub fn noise_len(&self) -> usize {
        match self.noise_sharing {
            NoiseSharing::Global => self.d_noise,
            NoiseSharing::PerSite => self.d_noise * self.sites,
        }
    }
}

/// Latent noise of one member at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub values: Vec<f64>,
    pub rng_stream_id: u64,
}

impl NoiseVector {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            values: vec![0.0; cfg.noise_len()],
            rng_stream_id: 0,
        }
    }
}

/// Two consecutive states `(X^{t-2}, X^{t-1})` in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub x_prev2: Vec<f64>,
    pub x_prev1: Vec<f64>,
}

impl TrajectoryWindow {
    pub fn new(x_prev2: Vec<f64>, x_prev1: Vec<f64>) -> Result<Self> {
        if x_prev2.len() != x_prev1.len() {
            return Err(contract("window frames have different site counts"));
        }
        if x_prev2.iter().chain(&x_prev1).any(|v| !v.is_finite()) {
            return Err(contract("window frames must be finite"));
        }
        Ok(Self { x_prev2, x_prev1 })
    }

    pub fn sites(&self) -> usize {
        self.x_prev1.len()
    }

    /// Rotates both frames so that site `k` moves to `(k + shift) mod K`.
    pub fn rotated(&self, shift: usize) -> Self {
        Self {
            x_prev2: rotate(&self.x_prev2, shift),
            x_prev1: rotate(&self.x_prev1, shift),
        }
    }
}

/// `out[(k + shift) mod K] = x[k]`.
pub fn rotate(x: &[f64], shift: usize) -> Vec<f64> {
    let k = x.len();
    let mut out = vec![0.0; k];
    for (i, v) in x.iter().enumerate() {
        out[(i + shift) % k] = *v;
    }
    out
}
