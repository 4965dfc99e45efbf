//! Minimal reverse-mode differentiation over dense `f64` arrays.
//!
//! Only the primitives the emulator and its loss need are provided. Rows of a
//! rank-2 tensor may be grouped into rings of a fixed size; ring-aware
//! primitives (`gather_ring`, `ring_attention`) never mix rows of different
//! rings, which lets a whole batch of lattices share one tape.

pub mod gradcheck;
mod tape;
mod tensor;

pub use tape::{ring_window_offsets, AttentionVars, Grads, LayerNormOut, Tape, Var};
pub use tensor::Tensor;

/// Layer-norm regularizer used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
