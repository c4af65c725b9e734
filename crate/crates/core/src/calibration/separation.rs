use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CalibrationProfile, Op};
use crate::error::{Error, Result};

pub const SEPARATION_GRID_STEP: u64 = 1000;
const DEFAULT_SEED: u64 = 0x5e9a_7a7e;

/// Smallest stress on a 1000-pair grid at which every one of
/// `confidence_samples` simulated replica means of stressed cells exceeds every
/// replica mean of fresh cells, for set timing.
///
/// Each trial models an independent replica on its own chip: one chip factor,
/// `replica_size` cells with their persistent offsets, one measurement each.
pub fn min_stress_for_separation(profile: &CalibrationProfile, replica_size: usize, confidence_samples: usize) -> Result<u64> {
    min_stress_for_separation_with_seed(profile, replica_size, confidence_samples, DEFAULT_SEED)
}

pub fn min_stress_for_separation_with_seed(
    profile: &CalibrationProfile,
    replica_size: usize,
    confidence_samples: usize,
    seed: u64,
) -> Result<u64> {
    if replica_size == 0 {
        return Err(Error::config("replica size must be at least 1"));
    }
    if confidence_samples == 0 {
        return Err(Error::config("need at least one confidence sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fresh_max = (0..confidence_samples)
        .map(|_| replica_mean(profile, 0.0, replica_size, &mut rng))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = SEPARATION_GRID_STEP;
    while s <= profile.endurance_max {
        let separated = (0..confidence_samples).all(|_| replica_mean(profile, s as f64, replica_size, &mut rng) > fresh_max);
        if separated {
            return Ok(s);
        }
        s += SEPARATION_GRID_STEP;
    }
    Err(Error::NotSeparable { replica_size, max_stress: profile.endurance_max })
}

fn replica_mean(profile: &CalibrationProfile, stress: f64, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let lognormal = |sigma: f64, rng: &mut ChaCha8Rng| {
        if sigma == 0.0 {
            return 1.0;
        }
        let z: f64 = StandardNormal.sample(rng);
        (sigma * z - sigma * sigma / 2.0).exp()
    };
    let sc = profile.cell_sigma(Op::Set, stress);
    let sm = profile.sigma(Op::Set);
    let chip = lognormal(profile.chip_variation, rng);
    let sum: f64 = (0..n).map(|_| lognormal(sc, rng) * lognormal(sm, rng)).sum();
    chip * profile.mean_time(Op::Set, stress) * sum / n as f64
}
