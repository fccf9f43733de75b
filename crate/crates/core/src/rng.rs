//! Seed plumbing. Every random draw in the crate descends from one root
//! seed through named sub-streams, so adding a consumer never perturbs the
//! draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used only to turn stream names into seed material.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives the seed of a named sub-stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    splitmix64(seed ^ splitmix64(hash_str(stream)))
}

/// Derives the seed of an indexed child of a stream (fold `i`, subject `i`, ...).
pub fn derive_indexed(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, stream) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

pub fn indexed_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, stream, index))
}

/// Counter-based uniform draw in [0, 1): a pure function of `(seed, counter)`.
#[inline]
pub fn counter_uniform(seed: u64, counter: u64) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(counter));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
