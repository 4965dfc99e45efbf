use std::f64::consts::TAU;

use super::params::{CondNormIdx, MixerIdx, MlpIdx};
use super::{ModelConfig, ModelParams, NoiseSharing, NoiseVector, ParamLayout, TrajectoryWindow};
use crate::diffcore::{AttentionVars, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::error::{contract, Result};
use crate::rng::{self, StreamRng};

/// Tape handles of every parameter tensor, in layout order.
pub(crate) struct ParamVars(pub Vec<Var>);

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &ModelParams) -> Self {
        Self(params.tensors.iter().map(|t| tape.leaf(t.clone())).collect())
    }

    fn at(&self, i: usize) -> Var {
        self.0[i]
    }
}

/// `[rings·K, 2]` sin/cos of each site's angle on the ring.
pub fn site_features(sites: usize, rings: usize) -> Tensor {
    let mut data = Vec::with_capacity(rings * sites * 2);
    for _ in 0..rings {
        for k in 0..sites {
            let a = TAU * k as f64 / sites as f64;
            data.push(a.sin());
            data.push(a.cos());
        }
    }
    Tensor::from_parts(vec![rings * sites, 2], data)
}

fn mlp(tape: &mut Tape, x: Var, idx: &MlpIdx, v: &ParamVars) -> Result<Var> {
    let h = tape.affine(x, v.at(idx.w1), Some(v.at(idx.b1)))?;
    let h = tape.gelu(h);
    tape.affine(h, v.at(idx.w2), Some(v.at(idx.b2)))
}

fn cond_norm(tape: &mut Tape, h: Var, c: Var, idx: &CondNormIdx, v: &ParamVars) -> Result<Var> {
    let normalized = tape.layer_norm(h, LAYER_NORM_EPS)?.normalized;
    let gamma = tape.affine(c, v.at(idx.gamma_w), Some(v.at(idx.gamma_b)))?;
    let beta = tape.affine(c, v.at(idx.beta_w), Some(v.at(idx.beta_b)))?;
    tape.cond_scale_shift(normalized, gamma, beta)
}

/// Records the network on `tape` and returns its raw per-site output.
///
/// `x2n`, `x1n` are normalized states of shape `[rings·K]`; `z` is
/// `[rings, d_noise]` for global noise or `[rings·K, d_noise]` per site. The
/// conditioning vector is computed once and reused by every conditional norm.
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_network(
    tape: &mut Tape,
    cfg: &ModelConfig,
    layout: &ParamLayout,
    v: &ParamVars,
    rings: usize,
    x2n: Var,
    x1n: Var,
    z: Var,
) -> Result<Var> {
    let k = cfg.sites;
    let rows = rings * k;
    let c = tape.affine(z, v.at(layout.noise_encoder), None)?;

    let a = tape.reshape(x2n, &[rows, 1])?;
    let b = tape.reshape(x1n, &[rows, 1])?;
    let mut channels = vec![a, b];
    if cfg.site_features {
        channels.push(tape.leaf(site_features(k, rings)));
    }
    let stencil = cfg.stencil();
    let inputs = tape.concat(&channels, 1)?;
    let gathered = tape.gather_ring(inputs, k, &stencil)?;
    let mut h = mlp(tape, gathered, &layout.encoder, v)?;

    for layer in &layout.layers {
        let n1 = cond_norm(tape, h, c, &layer.norm1, v)?;
        let mixed = match &layer.mixer {
            MixerIdx::Attention(a) => {
                let p = AttentionVars {
                    wq: v.at(a.wq),
                    bq: v.at(a.bq),
                    wk: v.at(a.wk),
                    bk: v.at(a.bk),
                    wv: v.at(a.wv),
                    bv: v.at(a.bv),
                    wo: v.at(a.wo),
                    bo: v.at(a.bo),
                };
                tape.local_attention(n1, k, cfg.window, cfg.heads, &p)?
            }
            MixerIdx::MessagePassing(m) => {
                let msgs = tape.gather_ring(n1, k, &stencil)?;
                mlp(tape, msgs, m, v)?
            }
        };
        h = tape.add(h, mixed)?;
        let n2 = cond_norm(tape, h, c, &layer.norm2, v)?;
        let m = mlp(tape, n2, &layer.mlp, v)?;
        h = tape.add(h, m)?;
    }
    let nf = cond_norm(tape, h, c, &layout.final_norm, v)?;
    let out = mlp(tape, nf, &layout.decoder, v)?;
    tape.reshape(out, &[rows])
}

fn noise_rows(cfg: &ModelConfig, rings: usize) -> usize {
    match cfg.noise_sharing {
        NoiseSharing::Global => rings,
        NoiseSharing::PerSite => rings * cfg.sites,
    }
}

struct Recorded {
    tape: Tape,
    z: Var,
    out: Var,
}

fn record(params: &ModelParams, x2: &[f64], x1: &[f64], z: &[f64]) -> Result<Recorded> {
    let cfg = &params.config;
    let k = cfg.sites;
    if x1.len() != x2.len() || x1.is_empty() || !x1.len().is_multiple_of(k) {
        return Err(contract(format!(
            "states of length {} / {} are not whole rings of {k} sites",
            x2.len(),
            x1.len()
        )));
    }
    let rings = x1.len() / k;
    if z.len() != rings * cfg.noise_len() {
        return Err(contract(format!(
            "noise has {} values, expected {} for {rings} ring(s)",
            z.len(),
            rings * cfg.noise_len()
        )));
    }
    let norm = params.norm;
    let layout = params.layout();
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params);
    let x2n = tape.leaf(Tensor::vector(x2.iter().map(|&v| norm.normalize(v)).collect()));
    let x1n = tape.leaf(Tensor::vector(x1.iter().map(|&v| norm.normalize(v)).collect()));
    let zv = tape.leaf(Tensor::from_parts(
        vec![noise_rows(cfg, rings), cfg.d_noise],
        z.to_vec(),
    ));
    let out = build_network(&mut tape, cfg, &layout, &vars, rings, x2n, x1n, zv)?;
    Ok(Recorded { tape, z: zv, out })
}

/// Next states for a batch of rings laid out back to back.
///
/// `x2`, `x1` hold `rings·K` physical values and `z` holds `rings` noise
/// vectors concatenated. Returns `x1 + residual_std · network_output`.
pub fn predict_batch(params: &ModelParams, x2: &[f64], x1: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let rec = record(params, x2, x1, z)?;
    let r = params.norm.residual_std;
    Ok(x1
        .iter()
        .zip(rec.tape.value(rec.out).data())
        .map(|(a, o)| a + r * o)
        .collect())
}

/// Predicted state at `t` from the window and one noise vector.
pub fn forward(params: &ModelParams, window: &TrajectoryWindow, z: &NoiseVector) -> Result<Tensor> {
    if window.sites() != params.config.sites {
        return Err(contract(format!(
            "window has {} sites, model expects {}",
            window.sites(),
            params.config.sites
        )));
    }
    let out = predict_batch(params, &window.x_prev2, &window.x_prev1, &z.values)?;
    Ok(Tensor::vector(out))
}

/// Draws a fresh noise vector from `rng` and runs one forward pass.
pub fn sample_member_step(
    params: &ModelParams,
    window: &TrajectoryWindow,
    rng: &mut StreamRng,
) -> Result<(Tensor, NoiseVector)> {
    let z = NoiseVector {
        values: rng::normals(rng, params.config.noise_len()),
        rng_stream_id: rng.get_stream(),
    };
    let state = forward(params, window, &z)?;
    Ok((state, z))
}

/// `∂X^t/∂z` as a `[K, noise_len]` matrix, by one reverse pass per site.
pub fn noise_jacobian(params: &ModelParams, window: &TrajectoryWindow, z: &NoiseVector) -> Result<Tensor> {
    let k = params.config.sites;
    if window.sites() != k {
        return Err(contract("window site count differs from the model"));
    }
    let rec = record(params, &window.x_prev2, &window.x_prev1, &z.values)?;
    let r = params.norm.residual_std;
    let nz = z.values.len();
    let mut jac = Vec::with_capacity(k * nz);
    for site in 0..k {
        let mut seed = vec![0.0; k];
        seed[site] = 1.0;
        let g = rec.tape.backward_with(rec.out, Tensor::vector(seed))?;
        jac.extend(g.wrt(rec.z).data().iter().map(|v| r * v));
    }
    Ok(Tensor::from_parts(vec![k, nz], jac))
}
