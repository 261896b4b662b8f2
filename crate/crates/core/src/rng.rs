//! Seed derivation for independent random streams.
//!
//! Every replicate, bootstrap draw and network initialization gets its own
//! ChaCha stream whose seed is `split_seed(parent, index)`. The split is a
//! SplitMix64 finalizer applied to the parent seed mixed with a scrambled
//! index, so neighbouring indices give unrelated streams and the mapping is
//! stable across platforms and thread schedules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `index` from `parent`.
pub fn split_seed(parent: u64, index: u64) -> u64 {
    mix64(parent.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))) ^ mix64(index))
}

/// A ChaCha8 generator for child stream `index` of `parent`.
pub fn stream(parent: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(parent, index))
}
