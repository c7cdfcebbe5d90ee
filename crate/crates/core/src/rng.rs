//! Seed plumbing. Every random stream in the engine is a `ChaCha8Rng` whose
//! seed is derived from a user seed plus a stream label, so results never
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `stream` from `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ stream.rotate_left(17) ^ 0xA076_1D64_78BD_642F)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    rng(derive(seed, stream))
}

// Stream labels.
pub(crate) const STREAM_INIT_POOL: u64 = 1;
pub(crate) const STREAM_PROBE_INIT: u64 = 2;
pub(crate) const STREAM_FINAL_INIT: u64 = 3;
pub(crate) const STREAM_ACQUISITION: u64 = 4;
pub(crate) const STREAM_HOLDOUT: u64 = 5;
