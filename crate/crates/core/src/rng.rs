//! Seed splitting.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream whose seed is
//! derived from the master seed and a fixed tag by [`derive_seed`]. The
//! derivation depends only on `(seed, tag)`, so streams are identical whether
//! work runs sequentially or concurrently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer applied to `seed` offset by `tag` golden-ratio steps.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
