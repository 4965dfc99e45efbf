use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::fgnnet::{ModelParams, NamedBlob, ParamKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to `Weight` tensors only.
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
            clip_norm: 32.0,
        }
    }
}

/// Adam moments per parameter tensor plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn matches(&self, params: &ModelParams) -> bool {
        self.m.len() == params.tensors.len()
            && self.v.len() == params.tensors.len()
            && params
                .tensors
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(t, (m, v))| m.len() == t.len() && v.len() == t.len())
    }

    pub fn to_blobs(&self) -> Vec<NamedBlob> {
        let blob = |name: String, data: &Vec<f64>| NamedBlob {
            name,
            shape: vec![data.len()],
            data: data.clone(),
        };
        self.m
            .iter()
            .enumerate()
            .map(|(i, d)| blob(format!("adam.m.{i}"), d))
            .chain(self.v.iter().enumerate().map(|(i, d)| blob(format!("adam.v.{i}"), d)))
            .collect()
    }

    pub fn from_blobs(blobs: &[NamedBlob], step: u64, params: &ModelParams) -> Result<Self> {
        let n = params.tensors.len();
        if blobs.len() != 2 * n {
            return Err(contract(format!(
                "optimizer state has {} blobs, expected {}",
                blobs.len(),
                2 * n
            )));
        }
        let state = Self {
            m: blobs[..n].iter().map(|b| b.data.clone()).collect(),
            v: blobs[n..].iter().map(|b| b.data.clone()).collect(),
            step,
        };
        if !state.matches(params) {
            return Err(contract("optimizer state shapes do not match the parameters"));
        }
        Ok(state)
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// One AdamW update in place. Gradients are clipped to the configured global
/// norm first. Returns the pre-clip norm.
pub fn adamw_step(
    params: &mut ModelParams,
    opt: &mut OptState,
    grads: &[Vec<f64>],
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<f64> {
    if !opt.matches(params) || grads.len() != params.tensors.len() {
        return Err(contract("gradients / optimizer state do not match the parameters"));
    }
    let norm = global_norm(grads);
    let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
        cfg.clip_norm / norm
    } else {
        1.0
    };
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let layout = params.layout();
    for (i, spec) in layout.specs().iter().enumerate() {
        let decay = if spec.kind == ParamKind::Weight {
            cfg.weight_decay
        } else {
            0.0
        };
        let p = params.tensors[i].data_mut();
        let (m, v) = (&mut opt.m[i], &mut opt.v[i]);
        for j in 0..p.len() {
            let g = scale * grads[i][j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + decay * p[j]);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgnnet::ModelConfig;
    use crate::synthdata::Normalization;

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            sites: 8,
            d_latent: 4,
            n_layers: 1,
            d_noise: 2,
            d_cond: 2,
            heads: 2,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, Normalization::identity(), 3, 0).unwrap()
    }

    fn grads_for(p: &ModelParams, v: f64) -> Vec<Vec<f64>> {
        p.tensors.iter().map(|t| vec![v; t.len()]).collect()
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = small();
        let before = p.clone();
        let mut opt = OptState::new(&p);
        adamw_step(&mut p, &mut opt, &grads_for(&before, 0.7), 0.0, &AdamWConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // After one step mhat = g and vhat = g², so the Adam part is lr·sign(g).
        let mut p = small();
        let before = p.clone();
        let mut opt = OptState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            eps: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &mut opt, &grads_for(&before, -0.25), 1e-3, &cfg).unwrap();
        for (a, b) in p.flat().iter().zip(before.flat()) {
            assert!((a - b - 1e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn decay_touches_only_weight_matrices() {
        let mut p = small();
        for t in &mut p.tensors {
            t.data_mut().fill(1.0);
        }
        let mut opt = OptState::new(&p);
        let zero = grads_for(&p, 0.0);
        adamw_step(&mut p, &mut opt, &zero, 0.5, &AdamWConfig::default()).unwrap();
        let layout = p.layout();
        for (s, t) in layout.specs().iter().zip(&p.tensors) {
            let want = if s.kind == ParamKind::Weight { 0.95 } else { 1.0 };
            assert!(t.data().iter().all(|&v| (v - want).abs() < 1e-15), "{}", s.name);
        }
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let p = small();
        let big = grads_for(&p, 100.0);
        let cfg = AdamWConfig::default();
        let mut q = p.clone();
        let mut opt = OptState::new(&q);
        let norm = adamw_step(&mut q, &mut opt, &big, 1e-3, &cfg).unwrap();
        assert!(norm > cfg.clip_norm);
        let clipped: Vec<f64> = opt.m.iter().flatten().map(|m| m / (1.0 - cfg.beta1)).collect();
        assert!((global_norm(&[clipped]) - cfg.clip_norm).abs() < 1e-9);
    }

    #[test]
    fn blobs_round_trip() {
        let p = small();
        let mut opt = OptState::new(&p);
        let mut q = p.clone();
        adamw_step(&mut q, &mut opt, &grads_for(&p, 0.3), 1e-3, &AdamWConfig::default()).unwrap();
        let back = OptState::from_blobs(&opt.to_blobs(), opt.step, &p).unwrap();
        assert_eq!(back, opt);
    }
}
