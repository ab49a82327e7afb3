//! Seeding helpers.
//!
//! Every stochastic component in the crate takes a [`SeedRng`] (or a u64 seed
//! that is turned into one). ChaCha8 is used because its output stream is
//! stable across platforms and releases, which the reproducibility contract
//! depends on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The crate-wide RNG type.
pub type SeedRng = ChaCha8Rng;

/// Build an RNG from a bare seed.
pub fn rng_from_seed(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child seed from a base seed and a textual tag.
///
/// Stages of the pipeline each get their own stream (`subseed(seed, "synth")`,
/// `subseed(seed, "rvq/word")`, ...) so that changing one stage's consumption
/// pattern cannot shift the draws of another.
pub fn subseed(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
