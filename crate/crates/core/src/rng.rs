//! Seed handling.
//!
//! A run has exactly one user-facing seed. Every stage and every work item
//! derives its own stream from it with [`derive_seed`], a counter-based
//! SplitMix64 mix of `(seed, stage, index)`. Because the derivation depends
//! only on the item index, serial and parallel execution draw identical
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Stage tags mixed into derived seeds.
pub mod stage {
    pub const SYNTH: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const RANK: u64 = 6;
    pub const HIGHLIGHT: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for item `index` of `stage`.
pub fn derive_seed(seed: u64, stage: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stage.wrapping_mul(0xA24B_AED4_963E_E407)) ^ index)
}

pub fn rng_for(seed: u64, stage: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stage, index))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
