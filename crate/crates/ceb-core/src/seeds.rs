//! Deterministic derivation of sub-seeds from a run seed.
//!
//! Every stochastic quantity in a run (noise draws, batch order, attack
//! starts, corruption noise) pulls its own stream derived from the run seed
//! and a purpose tag, so reruns replay bit-identically and streams never
//! alias each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from a base seed and a purpose tag.
pub fn derive(base: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seeded generator for the derived stream.
pub fn rng(base: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag))
}
