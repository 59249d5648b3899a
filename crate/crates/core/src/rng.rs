//! Named, splittable random streams.
//!
//! Every consumer of randomness (init, dropout, shuffling, data synthesis)
//! derives its own counter-based stream from the single run seed and a
//! stable name, so adding one consumer never perturbs the draws seen by
//! another. Index-keyed variants give per-sample / per-step streams, which
//! makes parallel and serial construction bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream for a named consumer of the run seed.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    derive(seed, name, None)
}

/// Stream for occurrence `index` of a named consumer (sample index,
/// global step, epoch, ...).
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    derive(seed, name, Some(index))
}

fn derive(seed: u64, name: &str, index: Option<u64>) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([name.len() as u8]);
    hasher.update(name.as_bytes());
    if let Some(i) = index {
        hasher.update([1u8]);
        hasher.update(i.to_le_bytes());
    }
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}
