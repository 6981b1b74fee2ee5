//! Named random substreams derived from a single global seed.
//!
//! Every consumer asks for its own stream keyed by a role string and a tuple of
//! indices (particle, task, step, ...). Adding a new consumer never shifts the
//! draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Stream for `(seed, role, indices)`.
pub fn substream(seed: u64, role: &str, indices: &[u64]) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((role.len() as u64).to_le_bytes());
    h.update(role.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed, for APIs that take a plain `u64`.
pub fn derive_seed(seed: u64, role: &str, indices: &[u64]) -> u64 {
    use rand::RngCore;
    substream(seed, role, indices).next_u64()
}
