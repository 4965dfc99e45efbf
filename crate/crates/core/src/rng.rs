//! Named, splittable random streams.
//!
//! A stream is identified by `(master seed, seed id, name)`; the triple is
//! hashed into a ChaCha key and `index` selects one of its 2^64 independent
//! sub-streams. Everything random in a run is derived this way, so any step
//! can be replayed without carrying generator state around.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream_key(master: u64, seed_id: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(seed_id.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, seed_id: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::from_seed(stream_key(master, seed_id, name));
    rng.set_stream(index);
    rng
}

pub fn normals(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
