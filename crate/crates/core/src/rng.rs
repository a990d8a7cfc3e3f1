//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded through
//! [`stream`]. A stream is identified by a base seed plus a list of integer
//! ids (sample index, epoch, purpose tag, ...), mixed with the SplitMix64
//! finalizer, so the same (seed, ids) always produces the same sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, ids: &[u64]) -> u64 {
    ids.iter().fold(mix64(seed), |acc, &id| mix64(acc ^ mix64(id)))
}

pub fn stream(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, ids))
}

/// In-place Fisher-Yates shuffle (Durstenfeld, descending).
pub fn fisher_yates<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

// Purpose tags for `stream`.
pub const TAG_INIT: u64 = 1;
pub const TAG_MASK: u64 = 2;
pub const TAG_PHANTOM: u64 = 3;
pub const TAG_GRADCHECK: u64 = 4;
pub const TAG_NOISE: u64 = 5;
