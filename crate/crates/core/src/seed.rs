//! Seed fan-out.
//!
//! Every stochastic component owns its generator, seeded from a
//! `(master seed, stage tag, item id)` triple hashed with SHA-256. No two
//! components share a mutable generator, so results do not depend on the
//! order in which parallel work completes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(master: u64, tag: &str, id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update((id.len() as u64).to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(master: u64, tag: &str, id: &str) -> Rng {
    rng_from_seed(derive_seed(master, tag, id))
}
