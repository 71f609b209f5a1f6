//! Seed derivation helpers.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is
//! derived from a base seed and a tuple of stream coordinates (epoch, batch,
//! layer, fold, ...). Streams never share state, so evaluation order cannot
//! change the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds stream coordinates into a base seed.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(mix64(base), |acc, &c| mix64(acc ^ mix64(c.wrapping_add(GOLDEN))))
}

pub fn stream(base: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, coords))
}
