//! Seed derivation for reproducible, splittable randomness.
//!
//! Every stochastic component draws from a `ChaCha8Rng` seeded through
//! [`mix`], a splitmix64-style mixer over (seed, stream tag). Derived
//! streams are statistically independent, so parallel workers can each own
//! one without coordination, and a run is reproducible from its master seed
//! alone.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the fixed sub-streams a training run derives from its
/// config seed. Keeping them in one place avoids accidental collisions.
pub mod stream {
    pub const INIT: u64 = 0x01;
    pub const TRAIN: u64 = 0x02;
    pub const SYNTH_FEATURES: u64 = 0x10;
    pub const SYNTH_LABELS: u64 = 0x11;
    pub const SUBSAMPLE: u64 = 0x12;
    pub const SPLIT: u64 = 0x13;
}

/// Mix a 64-bit seed with a stream tag into a new 64-bit seed.
///
/// splitmix64 finalizer applied to `seed + golden_gamma * (tag + 1)`; the
/// same construction splittable RNGs use for child streams.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(tag.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic RNG for the given seed/tag pair.
pub fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag))
}
