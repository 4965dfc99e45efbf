//! Checkpoint files: JSON header naming every parameter blob, followed by the
//! blobs as little-endian `f64` in header order. Training state (optimizer
//! moments, progress) rides along as extra named blobs plus a JSON value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::io;
use crate::synthdata::Normalization;

pub const CHECKPOINT_MAGIC: &[u8] = b"FGNCKPT1\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub config: ModelConfig,
    pub seed_id: u64,
    pub provenance: Vec<String>,
    pub normalization: Normalization,
    pub normalization_hash: String,
    pub tensors: Vec<BlobSpec>,
    #[serde(default)]
    pub extras: Vec<BlobSpec>,
    #[serde(default)]
    pub state: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn header_and_payload(
    params: &ModelParams,
    state: Option<serde_json::Value>,
    extras: &[NamedBlob],
) -> Result<(CheckpointHeader, Vec<f64>)> {
    params.validate()?;
    let layout = params.layout();
    let header = CheckpointHeader {
        format: 1,
        config: params.config.clone(),
        seed_id: params.seed_id,
        provenance: params.provenance.clone(),
        normalization: params.norm,
        normalization_hash: params.norm.hash(),
        tensors: layout
            .specs()
            .iter()
            .map(|s| BlobSpec {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect(),
        extras: extras
            .iter()
            .map(|b| BlobSpec {
                name: b.name.clone(),
                shape: b.shape.clone(),
            })
            .collect(),
        state,
    };
    let mut payload = params.flat();
    for b in extras {
        payload.extend_from_slice(&b.data);
    }
    Ok((header, payload))
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    save_with_state(path, params, None, &[])
}

pub fn save_with_state(
    path: &Path,
    params: &ModelParams,
    state: Option<serde_json::Value>,
    extras: &[NamedBlob],
) -> Result<()> {
    let (header, payload) = header_and_payload(params, state, extras)?;
    io::write_container(path, CHECKPOINT_MAGIC, &header, &payload)
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    io::read_header(path, CHECKPOINT_MAGIC)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    load_with_state(path).map(|(p, _, _)| p)
}

pub fn load_with_state(
    path: &Path,
) -> Result<(ModelParams, Option<serde_json::Value>, Vec<NamedBlob>)> {
    let (h, payload): (CheckpointHeader, Vec<f64>) = io::read_container(path, CHECKPOINT_MAGIC)?;
    let bad = |m: String| Error::Corrupt(format!("{}: {m}", path.display()));
    if h.normalization.hash() != h.normalization_hash {
        return Err(bad("normalization hash mismatch".into()));
    }
    let numel = |s: &BlobSpec| s.shape.iter().product::<usize>();
    let expected: usize = h.tensors.iter().chain(&h.extras).map(numel).sum();
    if expected != payload.len() {
        return Err(bad(format!(
            "payload holds {} values, header describes {expected}",
            payload.len()
        )));
    }
    let layout = super::ParamLayout::new(&h.config);
    if layout.specs().len() != h.tensors.len()
        || layout
            .specs()
            .iter()
            .zip(&h.tensors)
            .any(|(s, b)| s.name != b.name || s.shape != b.shape)
    {
        return Err(bad("parameter blobs do not match the model config".into()));
    }
    let mut at = 0;
    let mut take = |spec: &BlobSpec| {
        let n = numel(spec);
        let data = payload[at..at + n].to_vec();
        at += n;
        data
    };
    let tensors = h
        .tensors
        .iter()
        .map(|s| Tensor::from_parts(s.shape.clone(), take(s)))
        .collect();
    let extras = h
        .extras
        .iter()
        .map(|s| NamedBlob {
            name: s.name.clone(),
            shape: s.shape.clone(),
            data: take(s),
        })
        .collect();
    let params = ModelParams {
        config: h.config,
        seed_id: h.seed_id,
        norm: h.normalization,
        provenance: h.provenance,
        tensors,
    };
    Ok((params, h.state, extras))
}
