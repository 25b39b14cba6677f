//! Seed handling shared by every stochastic component.
//!
//! All randomness flows through [`ChaCha8Rng`] so that outputs are identical
//! across platforms. Sub-streams are derived with a SplitMix64 finalizer so
//! that per-sample or per-epoch seeds do not depend on scheduling order.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for stream `index` under `seed` and a domain tag.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(domain)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, domain: u64, index: u64) -> Rng {
    rng_from_seed(derive_seed(seed, domain, index))
}

pub(crate) mod domain {
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const EPOCH: u64 = 0x4550_4f43;
    pub const INIT: u64 = 0x494e_4954;
}
