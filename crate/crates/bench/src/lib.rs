//! Fixtures shared by the benchmarks.

use fgn_core::fgnnet::NoiseVector;
use fgn_core::synthdata::make_dataset;
use fgn_core::{rng, Dataset, ModelConfig, ModelParams, SystemConfig, Tensor, TrajectoryWindow};

/// Desk-scale dataset (default system, 2000 frames).
pub fn dataset() -> Dataset {
    make_dataset(&SystemConfig::default(), 2000, [0.8, 0.1, 0.1]).expect("default system is valid")
}

pub fn model(data: &Dataset) -> ModelParams {
    ModelParams::init(&ModelConfig::default(), data.stats, 0, 0).expect("default model is valid")
}

/// Matrix of standard normals.
pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(0, seed, "bench", 0);
    Tensor::new(vec![rows, cols], rng::normals(&mut r, rows * cols)).expect("shape matches data")
}

pub fn window(data: &Dataset) -> TrajectoryWindow {
    fgn_core::forecast::init_window(data, 100).expect("frame 100 exists")
}

pub fn noise(cfg: &ModelConfig) -> NoiseVector {
    let mut r = rng::stream(0, 0, "bench-noise", 0);
    NoiseVector {
        values: rng::normals(&mut r, cfg.noise_len()),
        rng_stream_id: 0,
    }
}
