use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ProcessorKind};
use crate::diffcore::Tensor;
use crate::error::{contract, Result};
use crate::rng;
use crate::synthdata::Normalization;

/// Role of a parameter tensor; drives initialization and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Weight,
    Bias,
    /// Maps from the conditioning vector to a norm's gamma or beta.
    CondMap,
    NoiseEncoder,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct MlpIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct CondNormIdx {
    pub gamma_w: usize,
    pub gamma_b: usize,
    pub beta_w: usize,
    pub beta_b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum MixerIdx {
    Attention(AttentionIdx),
    MessagePassing(MlpIdx),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerIdx {
    pub norm1: CondNormIdx,
    pub mixer: MixerIdx,
    pub norm2: CondNormIdx,
    pub mlp: MlpIdx,
}

/// Ordered list of every parameter tensor implied by a [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    pub(crate) noise_encoder: usize,
    pub(crate) encoder: MlpIdx,
    pub(crate) layers: Vec<LayerIdx>,
    pub(crate) final_norm: CondNormIdx,
    pub(crate) decoder: MlpIdx,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.specs.push(ParamSpec { name, shape, kind });
        self.specs.len() - 1
    }

    fn mlp(&mut self, prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) -> MlpIdx {
        MlpIdx {
            w1: self.add(format!("{prefix}.w1"), vec![d_in, d_hidden], ParamKind::Weight),
            b1: self.add(format!("{prefix}.b1"), vec![d_hidden], ParamKind::Bias),
            w2: self.add(format!("{prefix}.w2"), vec![d_hidden, d_out], ParamKind::Weight),
            b2: self.add(format!("{prefix}.b2"), vec![d_out], ParamKind::Bias),
        }
    }

    fn cond_norm(&mut self, prefix: &str, d_cond: usize, d: usize) -> CondNormIdx {
        CondNormIdx {
            gamma_w: self.add(format!("{prefix}.gamma_w"), vec![d_cond, d], ParamKind::CondMap),
            gamma_b: self.add(format!("{prefix}.gamma_b"), vec![d], ParamKind::CondMap),
            beta_w: self.add(format!("{prefix}.beta_w"), vec![d_cond, d], ParamKind::CondMap),
            beta_b: self.add(format!("{prefix}.beta_b"), vec![d], ParamKind::CondMap),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttentionIdx {
        let mut lin = |n: &str| {
            (
                self.add(format!("{prefix}.w{n}"), vec![d, d], ParamKind::Weight),
                self.add(format!("{prefix}.b{n}"), vec![d], ParamKind::Bias),
            )
        };
        let (wq, bq) = lin("q");
        let (wk, bk) = lin("k");
        let (wv, bv) = lin("v");
        let (wo, bo) = lin("o");
        AttentionIdx {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_latent;
        let mut b = Builder { specs: Vec::new() };
        let noise_encoder = b.add(
            "noise_encoder".into(),
            vec![cfg.d_noise, cfg.d_cond],
            ParamKind::NoiseEncoder,
        );
        let in_features = cfg.input_channels() * cfg.stencil().len();
        let encoder = b.mlp("encoder", in_features, d, d);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("layer{l}");
                let norm1 = b.cond_norm(&format!("{p}.norm1"), cfg.d_cond, d);
                let mixer = match cfg.processor {
                    ProcessorKind::Attention => MixerIdx::Attention(b.attention(&format!("{p}.attn"), d)),
                    ProcessorKind::MlpMessagePassing => MixerIdx::MessagePassing(b.mlp(
                        &format!("{p}.mp"),
                        d * cfg.stencil().len(),
                        d,
                        d,
                    )),
                };
                let norm2 = b.cond_norm(&format!("{p}.norm2"), cfg.d_cond, d);
                let mlp = b.mlp(&format!("{p}.mlp"), d, d, d);
                LayerIdx {
                    norm1,
                    mixer,
                    norm2,
                    mlp,
                }
            })
            .collect();
        let final_norm = b.cond_norm("final_norm", cfg.d_cond, d);
        let decoder = b.mlp("decoder", d, d, 1);
        Self {
            specs: b.specs,
            noise_encoder,
            encoder,
            layers,
            final_norm,
            decoder,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }
}

/// Exact number of scalar parameters of one model seed.
pub fn param_count(cfg: &ModelConfig) -> usize {
    ParamLayout::new(cfg).total()
}

/// All learned parameters of one model seed plus the data normalization
/// they were trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed_id: u64,
    pub norm: Normalization,
    /// Completed training stages, oldest first.
    pub provenance: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Fresh parameters: LeCun-normal weights, zero biases, and zero
    /// conditional-norm maps so the initial model ignores its noise.
    pub fn init(cfg: &ModelConfig, norm: Normalization, master_seed: u64, seed_id: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        let mut rng = rng::stream(master_seed, seed_id, "init", 0);
        let tensors = layout
            .specs()
            .iter()
            .map(|s| {
                let n = s.numel();
                let data = match s.kind {
                    ParamKind::Weight | ParamKind::NoiseEncoder => {
                        let std = 1.0 / (s.shape[0] as f64).sqrt();
                        (0..n)
                            .map(|_| { let v: f64 = StandardNormal.sample(&mut rng); std * v })
                            .collect::<Vec<f64>>()
                    }
                    ParamKind::Bias | ParamKind::CondMap => vec![0.0; n],
                };
                Tensor::from_parts(s.shape.clone(), data)
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            seed_id,
            norm,
            provenance: Vec::new(),
            tensors,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks that the tensors match the layout implied by the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = self.layout();
        if layout.specs().len() != self.tensors.len() {
            return Err(contract("parameter tensor count does not match the config"));
        }
        for (s, t) in layout.specs().iter().zip(&self.tensors) {
            if s.shape != t.shape() {
                return Err(contract(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    /// Zeroes every conditional-norm map, severing the noise path.
    pub fn zero_cond_maps(&mut self) {
        let layout = self.layout();
        for (s, t) in layout.specs().iter().zip(self.tensors.iter_mut()) {
            if s.kind == ParamKind::CondMap {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Concatenation of every tensor, in layout order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}
