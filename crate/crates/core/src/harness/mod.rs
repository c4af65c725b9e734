//! Experiment harness: usage and aging simulation, attacks, sweeps and the
//! closed-form throughput and cost calculators.

mod report;
mod sweep;

pub use report::{optimal_threshold_errors, write_csv, write_csv_file, SeparationReport, SweepRow, CSV_HEADER};
pub use sweep::{
    sweep_initial_stress, sweep_post_hiding, sweep_replica_size, tolerance, Experiment, InitialStressSweep, PostHidingSweep,
    ReplicaSweep, ToleranceRow,
};

use std::ops::Range;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::codec::{decode, DecodeConfig, HidingKey, Payload};
use crate::device::{Address, BakeRecord, ChipModel};
use crate::error::{Error, Result};

pub type Exact = Ratio<u64>;

/// `N * B_msg * pair_time`: every message bit is charged the full stress run.
pub fn encode_time(n: u64, b_msg: u64, pair_time: Exact) -> Exact {
    pair_time * (n * b_msg)
}

/// `t_switch * B_msg * N_rep`.
pub fn retrieve_time(mean_switch: Exact, b_msg: u64, n_rep: u64) -> Exact {
    mean_switch * (b_msg * n_rep)
}

/// Fraction of the rated endurance spent by hiding with `n` pairs.
pub fn endurance_cost(n: u64, rated_pairs: u64) -> Exact {
    Ratio::new(n, rated_pairs)
}

/// Bits per unit time for `bits` moved in `seconds`; `None` for zero time.
pub fn throughput(bits: u64, seconds: Exact, per_seconds: u64) -> Option<Exact> {
    (seconds != Ratio::from_integer(0)).then(|| Ratio::from_integer(bits * per_seconds) / seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UsagePattern {
    /// Every round writes the complement of the previous one: all bits stressed.
    WorstCaseToggle,
    /// Random data where bit `b` (0 = LSB) toggles with probability
    /// `lsb_toggle_prob * msb_decay^b` per round, identically for every address.
    RealisticRandom { lsb_toggle_prob: f64, msb_decay: f64 },
}

impl UsagePattern {
    pub fn realistic() -> Self {
        UsagePattern::RealisticRandom { lsb_toggle_prob: 0.5, msb_decay: 0.75 }
    }

    pub fn toggle_probabilities(&self) -> [f64; 8] {
        match *self {
            UsagePattern::WorstCaseToggle => [1.0; 8],
            UsagePattern::RealisticRandom { lsb_toggle_prob, msb_decay } => {
                std::array::from_fn(|b| (lsb_toggle_prob * msb_decay.powi(b as i32)).clamp(0.0, 1.0))
            }
        }
    }

    /// Share of the total wear each bit position receives; sums to one.
    pub fn bit_weights(&self) -> [f64; 8] {
        let p = self.toggle_probabilities();
        let total: f64 = p.iter().sum();
        p.map(|x| if total > 0.0 { x / total } else { 0.125 })
    }

    fn validate(&self) -> Result<()> {
        if let UsagePattern::RealisticRandom { lsb_toggle_prob, msb_decay } = *self {
            if !(0.0..=1.0).contains(&lsb_toggle_prob) || !(0.0..=1.0).contains(&msb_decay) {
                return Err(Error::config("usage probabilities must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Applies `cycles` rounds of normal memory use to `region`. Stored values are
/// restored afterwards, as if the owner rewrote their data; only wear remains.
pub fn simulate_usage(chip: &mut ChipModel, pattern: UsagePattern, cycles: u64, region: Range<Address>, seed: u64) -> Result<()> {
    pattern.validate()?;
    if region.is_empty() || cycles == 0 {
        return Ok(());
    }
    chip.geometry().check_range(region.start, region.end - region.start)?;
    let limit = chip.profile().endurance_max;
    let add = u32::try_from(cycles).map_err(|_| Error::config("usage cycle count too large"))?;
    match pattern {
        UsagePattern::WorstCaseToggle => {
            for a in region.clone() {
                chip.add_bit_stress(a, [add; 8]);
            }
        }
        UsagePattern::RealisticRandom { .. } => {
            let probs = pattern.toggle_probabilities();
            let dists: Vec<Binomial> = probs.iter().map(|&p| Binomial::new(cycles, p).expect("validated")).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ chip.seed().rotate_left(17));
            for a in region.clone() {
                let extra: [u32; 8] = std::array::from_fn(|b| dists[b].sample(&mut rng) as u32);
                chip.add_bit_stress(a, extra);
            }
        }
    }
    let worn = region.clone().filter(|&a| chip.cells()[a as usize].stress_count() as u64 > limit).count();
    if worn > 0 {
        log::warn!("usage pushed {worn} cells past the endurance limit");
    }
    let windows = (region.end - region.start).div_ceil(chip.geometry().buffer_size);
    chip.advance_clock(cycles as f64 * chip.profile().pair_time * windows as f64);
    Ok(())
}

/// Unpowered storage at 25 °C.
pub fn age_retention(chip: &mut ChipModel, seconds: f64) -> Result<()> {
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return Err(Error::config("retention duration must be non-negative"));
    }
    chip.age(seconds, 1.0);
    Ok(())
}

/// Unpowered storage at `celsius`; retention drift is accelerated by the
/// profile's factor per 10 °C above 25 °C.
pub fn bake(chip: &mut ChipModel, celsius: f64, seconds: f64) -> Result<()> {
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return Err(Error::config("bake duration must be non-negative"));
    }
    let p = chip.profile();
    if !(p.min_temperature..=p.max_temperature).contains(&celsius) {
        return Err(Error::config(format!("bake temperature {celsius} °C outside rated range")));
    }
    let acceleration = p.thermal_acceleration.powf(((celsius - 25.0) / 10.0).max(0.0));
    chip.age(seconds, acceleration);
    chip.record_bake(BakeRecord { celsius, seconds });
    Ok(())
}

/// Decodes with the key and reports separation against the true payload.
pub fn honest_report(chip: &mut ChipModel, key: &HidingKey, payload: &Payload, config: &DecodeConfig) -> Result<SeparationReport> {
    let r = decode(chip, key, config)?;
    SeparationReport::new(&r.means, payload, &r.bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetMode {
    /// Half the footprint early: the read window overlaps the larger part of the payload.
    Case1,
    /// A little over two replicas early, not replica aligned.
    Case2,
    /// Half the footprint late: an integer number of replicas.
    Case3,
    Custom(i64),
}

impl OffsetMode {
    pub fn offset(&self, key: &HidingKey) -> i64 {
        let half = (key.footprint() / 2) as i64;
        match *self {
            OffsetMode::Case1 => -half,
            OffsetMode::Case2 => -((536 * key.replica_size).div_ceil(256) as i64),
            OffsetMode::Case3 => half,
            OffsetMode::Custom(o) => o,
        }
    }
}

pub fn attack_wrong_base(
    chip: &mut ChipModel,
    key: &HidingKey,
    payload: &Payload,
    mode: OffsetMode,
    config: &DecodeConfig,
) -> Result<SeparationReport> {
    let base = key
        .base_address
        .checked_add_signed(mode.offset(key))
        .ok_or_else(|| Error::config("perturbed base address below zero"))?;
    let wrong = HidingKey { base_address: base, ..key.clone() };
    honest_report(chip, &wrong, payload, config)
}

/// Decodes with freshly drawn rotations in place of the real ones.
pub fn attack_wrong_key(
    chip: &mut ChipModel,
    key: &HidingKey,
    payload: &Payload,
    seed: u64,
    config: &DecodeConfig,
) -> Result<SeparationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations = (0..key.replica_count).map(|_| rng.random_range(0..key.payload_length)).collect();
    let wrong = HidingKey { rotations, ..key.clone() };
    honest_report(chip, &wrong, payload, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{CalibrationProfile, Op};
    use crate::codec::{encode, generate_key};
    use crate::device::ChipGeometry;

    #[test]
    fn calculators() {
        let ten_ms = Ratio::new(1, 100);
        assert_eq!(encode_time(15_000, 32, ten_ms), Ratio::from_integer(4800));
        assert_eq!(throughput(32, encode_time(15_000, 32, ten_ms), 60), Some(Ratio::new(2, 5)));
        assert_eq!(encode_time(0, 32, ten_ms), Ratio::from_integer(0));
        assert_eq!(encode_time(45_000, 32, ten_ms), Ratio::from_integer(14_400));
        let t = retrieve_time(Ratio::new(250, 1_000_000), 32, 256);
        assert_eq!(t, Ratio::new(2048, 1000));
        assert_eq!(throughput(32, t, 1), Some(Ratio::new(125, 8)));
        assert_eq!(retrieve_time(Ratio::new(250, 1_000_000), 32, 1), Ratio::new(8, 1000));
        assert_eq!(endurance_cost(15_000, 500_000), Ratio::new(3, 100));
        assert_eq!(endurance_cost(45_000, 500_000), Ratio::new(9, 100));
        assert_eq!(endurance_cost(0, 500_000), Ratio::from_integer(0));
        assert_eq!(throughput(32, Ratio::from_integer(0), 1), None);
    }

    #[test]
    fn realistic_weights() {
        let w = UsagePattern::realistic().bit_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.windows(2).all(|p| p[0] > p[1]));
        let u = UsagePattern::WorstCaseToggle.bit_weights();
        assert!(u.iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn worst_case_usage_accounting() {
        let mut chip = ChipModel::new(ChipGeometry::with_addresses(1024), CalibrationProfile::default(), 1).unwrap();
        chip.timed_write(10, 0x5A).unwrap();
        simulate_usage(&mut chip, UsagePattern::WorstCaseToggle, 50_000, 0..512, 0).unwrap();
        assert!((0..512).all(|a| chip.stress_count(a).unwrap() == 50_000));
        assert_eq!(chip.read(10).unwrap(), 0x5A);
        assert_eq!(chip.stress_count(600).unwrap(), 0);
        let before = chip.clone();
        simulate_usage(&mut chip, UsagePattern::WorstCaseToggle, 0, 0..512, 0).unwrap();
        assert_eq!(chip, before);
        assert!(simulate_usage(&mut chip, UsagePattern::WorstCaseToggle, 1, 1000..1025, 0).is_err());
    }

    #[test]
    fn offsets_follow_layout() {
        let g = ChipGeometry::with_addresses(1 << 17);
        let key = generate_key(&g, 32, 65_536, 256, 1, 15_000, 0).unwrap();
        assert_eq!(OffsetMode::Case1.offset(&key), -4096);
        assert_eq!(OffsetMode::Case2.offset(&key), -536);
        assert_eq!(OffsetMode::Case3.offset(&key), 4096);
        assert_eq!(OffsetMode::Case3.offset(&key) % 256, 0);
    }

    #[test]
    fn zero_offset_equals_honest_decode() {
        let g = ChipGeometry::with_addresses(1 << 17);
        let mut a = ChipModel::new(g, CalibrationProfile::default(), 5).unwrap();
        let p = Payload::from_hex("0xECE3038B").unwrap();
        let key = generate_key(&g, 32, 65_536, 256, 1, 15_000, 0).unwrap();
        encode(&mut a, &key, &p).unwrap();
        let mut b = a.clone();
        let cfg = DecodeConfig::kmeans(Op::Set);
        let honest = honest_report(&mut a, &key, &p, &cfg).unwrap();
        let zero = attack_wrong_base(&mut b, &key, &p, OffsetMode::Custom(0), &cfg).unwrap();
        assert_eq!(honest, zero);
        assert!(honest.separable());
    }

    #[test]
    fn retention_and_bake_bookkeeping() {
        let mut chip = ChipModel::new(ChipGeometry::with_addresses(64), CalibrationProfile::default(), 1).unwrap();
        let before = chip.clone();
        age_retention(&mut chip, 0.0).unwrap();
        assert_eq!(chip, before);
        age_retention(&mut chip, 86_400.0).unwrap();
        bake(&mut chip, 80.0, 86_400.0).unwrap();
        assert_eq!(chip.calendar(), 2.0 * 86_400.0);
        assert_eq!(chip.thermal_history().len(), 1);
        assert_eq!(chip.aging_factor(), 1.0);
        assert!(bake(&mut chip, 200.0, 1.0).is_err());
        assert!(age_retention(&mut chip, -1.0).is_err());
    }
}
