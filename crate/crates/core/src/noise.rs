//! Counter-keyed noise.
//!
//! Every timing draw is a pure function of `(seed, domain, stream, event)`, so a
//! chip needs no mutable RNG state to be replayable: a saved and reloaded chip
//! produces exactly the traces the original would have.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub(crate) const DOMAIN_MEASURE: u64 = 0x6d65_6173;
pub(crate) const DOMAIN_CELL: u64 = 0x6365_6c6c;
pub(crate) const DOMAIN_CHIP: u64 = 0x6368_6970;
pub(crate) const DOMAIN_READ: u64 = 0x7265_6164;
pub(crate) const DOMAIN_JITTER: u64 = 0x6a69_7474;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn key(seed: u64, domain: u64, stream: u64, event: u64) -> u64 {
    splitmix(splitmix(splitmix(seed ^ domain) ^ stream) ^ event)
}

pub(crate) fn normal(seed: u64, domain: u64, stream: u64, event: u64) -> f64 {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(key(seed, domain, stream, event));
    StandardNormal.sample(&mut rng)
}

/// Uniform draw in `[0, 1)`.
pub(crate) fn uniform(seed: u64, domain: u64, stream: u64, event: u64) -> f64 {
    (key(seed, domain, stream, event) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
