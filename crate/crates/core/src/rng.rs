//! Seed derivation shared by every stochastic component.
//!
//! All randomness flows through `ChaCha8Rng` seeded via
//! `SeedableRng::seed_from_u64`, which is specified independently of
//! platform and word size. Child streams get their seed from
//! [`derive_seed`], a SplitMix64 mix of the parent seed, a domain tag and a
//! stream index, so that e.g. tree `t` of a forest or repeat `r` of an
//! evaluation draws from its own stream regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of stream `index` within domain `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag_hash(tag)).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(seed, tag, index))
}
