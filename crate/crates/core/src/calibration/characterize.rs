use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{CalibrationProfile, Op, SpreadCurve, WearCurve, SPREAD_REFERENCE_STRESS};
use crate::device::{Address, ChipModel};
use crate::error::{Error, Result};

/// Cells averaged into one characterization sample.
pub const GROUP_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Envelope {
    fn of(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, mean: values.iter().sum::<f64>() / values.len() as f64, max }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Statistics of replica-group mean latencies at one stress level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationRecord {
    pub stress_level: u64,
    pub set: Envelope,
    pub reset: Envelope,
    pub n_groups: usize,
    pub group_size: usize,
}

impl CharacterizationRecord {
    pub fn envelope(&self, op: Op) -> &Envelope {
        match op {
            Op::Set => &self.set,
            Op::Reset => &self.reset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizationRun {
    pub records: Vec<CharacterizationRecord>,
    /// The run stopped early because the cells reached their endurance limit.
    pub truncated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    stress_level: u64,
    set_min_s: f64,
    set_mean_s: f64,
    set_max_s: f64,
    reset_min_s: f64,
    reset_mean_s: f64,
    reset_max_s: f64,
    n_groups: usize,
    group_size: usize,
    seed: u64,
}

/// Writes records as CSV, tagging every row with the seed that produced them.
pub fn write_records_csv<W: std::io::Write>(out: W, records: &[CharacterizationRecord], seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(RecordRow {
            stress_level: r.stress_level,
            set_min_s: r.set.min,
            set_mean_s: r.set.mean,
            set_max_s: r.set.max,
            reset_min_s: r.reset.min,
            reset_mean_s: r.reset.mean,
            reset_max_s: r.reset.max,
            n_groups: r.n_groups,
            group_size: r.group_size,
            seed,
        })?;
    }
    if records.is_empty() {
        w.write_record(["stress_level", "set_min_s", "set_mean_s", "set_max_s", "reset_min_s", "reset_mean_s", "reset_max_s", "n_groups", "group_size", "seed"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<CharacterizationRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize::<RecordRow>()
        .map(|row| {
            let r = row.map_err(|e| Error::format(format!("bad characterization CSV: {e}")))?;
            Ok(CharacterizationRecord {
                stress_level: r.stress_level,
                set: Envelope { min: r.set_min_s, mean: r.set_mean_s, max: r.set_max_s },
                reset: Envelope { min: r.reset_min_s, mean: r.reset_mean_s, max: r.reset_max_s },
                n_groups: r.n_groups,
                group_size: r.group_size,
            })
        })
        .collect()
}

fn levels(max_pairs: u64, interval: u64) -> Vec<u64> {
    if max_pairs == 0 {
        return vec![0];
    }
    let mut v: Vec<u64> = (0..=max_pairs).step_by(interval as usize).collect();
    if *v.last().unwrap() != max_pairs {
        v.push(max_pairs);
    }
    v
}

/// Repeatedly stresses `addresses` with alternating all-zero and all-one
/// patterns, sampling group statistics every `sample_interval` pairs.
///
/// Levels are counted from the most worn address at the start, so a fresh
/// chip yields records at absolute stress 0, I, 2I, … up to `max_pairs`.
/// The extra pair each measurement applies is absorbed into the next step.
/// Destructive: the cells end `max_pairs + 1` pairs older.
pub fn characterize(
    chip: &mut ChipModel,
    addresses: &[Address],
    max_pairs: u64,
    sample_interval: u64,
) -> Result<CharacterizationRun> {
    if addresses.is_empty() {
        return Err(Error::config("characterization needs at least one address"));
    }
    let limit = chip.profile().endurance_max;
    if max_pairs > limit {
        return Err(Error::config(format!("max_pairs {max_pairs} exceeds endurance limit {limit}")));
    }
    if max_pairs > 0 && sample_interval == 0 {
        return Err(Error::config("sample interval must be positive"));
    }
    let mut baseline = 0u64;
    for &a in addresses {
        baseline = baseline.max(chip.stress_count(a)? as u64);
    }
    let group_size = GROUP_SIZE.min(addresses.len());
    let mut records = Vec::new();
    let mut truncated = false;
    for level in levels(max_pairs, sample_interval) {
        let target = baseline + level;
        if target > limit {
            log::warn!("characterization stopped at {target} pairs: endurance limit {limit} reached");
            truncated = true;
            break;
        }
        bring_to(chip, addresses, target)?;
        let trace = chip.measure_trace(addresses)?;
        let group_means = |op: Op| -> Vec<f64> {
            let times: Vec<f64> = trace.times(op).collect();
            times.chunks(group_size).map(|g| g.iter().sum::<f64>() / g.len() as f64).collect()
        };
        let set = group_means(Op::Set);
        records.push(CharacterizationRecord {
            stress_level: target,
            set: Envelope::of(&set),
            reset: Envelope::of(&group_means(Op::Reset)),
            n_groups: set.len(),
            group_size,
        });
    }
    Ok(CharacterizationRun { records, truncated })
}

fn bring_to(chip: &mut ChipModel, addresses: &[Address], target: u64) -> Result<()> {
    let mut by_stress: BTreeMap<u64, Vec<Address>> = BTreeMap::new();
    for &a in addresses {
        by_stress.entry(chip.stress_count(a)? as u64).or_default().push(a);
    }
    for (stress, group) in by_stress {
        if stress < target {
            chip.stress_pairs(&group, target - stress)?;
        }
    }
    Ok(())
}

/// Expected range of `n` independent standard normal draws.
pub(crate) fn expected_normal_range(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (lo, hi, steps) = (-12.0, 12.0, 24_000);
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| {
        let c = normal.cdf(x);
        1.0 - (1.0 - c).powi(n as i32) - c.powi(n as i32)
    };
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..steps {
        acc += f(lo + i as f64 * h);
    }
    acc * h
}

/// Relative variance of one cell sample: `exp(sigma_cell^2 + sigma_meas^2) - 1`.
fn sample_rel_var(profile: &CalibrationProfile, op: Op, stress: f64) -> f64 {
    let sc = profile.cell_sigma(op, stress);
    let sm = profile.sigma(op);
    (sc * sc + sm * sm).exp_m1()
}

/// Noise-free records a profile predicts: exact means and envelopes at the
/// expected range of `n_groups` group means.
pub fn synthesize_records(
    profile: &CalibrationProfile,
    levels: &[u64],
    n_groups: usize,
    group_size: usize,
) -> Vec<CharacterizationRecord> {
    let d2 = expected_normal_range(n_groups);
    levels
        .iter()
        .map(|&s| {
            let env = |op: Op| {
                let mean = profile.mean_time(op, s as f64);
                let half = 0.5 * d2 * mean * (sample_rel_var(profile, op, s as f64) / group_size as f64).sqrt();
                Envelope { min: mean - half, mean, max: mean + half }
            };
            CharacterizationRecord { stress_level: s, set: env(Op::Set), reset: env(Op::Reset), n_groups, group_size }
        })
        .collect()
}

/// Fits wear curves and noise parameters to characterization records, keeping
/// the non-fitted fields (command times, limits, temperature) of the default profile.
pub fn fit_profile(records: &[CharacterizationRecord]) -> Result<CalibrationProfile> {
    fit_profile_onto(records, &CalibrationProfile::default())
}

pub fn fit_profile_onto(records: &[CharacterizationRecord], template: &CalibrationProfile) -> Result<CalibrationProfile> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.stress_level);
    sorted.dedup_by_key(|r| r.stress_level);
    if sorted.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 distinct stress levels, got {}", sorted.len())));
    }
    if sorted[0].stress_level != 0 {
        return Err(Error::Fit("no fresh (stress 0) record to anchor t0".into()));
    }
    for r in &sorted {
        for op in [Op::Set, Op::Reset] {
            let e = r.envelope(op);
            if !(e.min > 0.0 && e.min <= e.mean && e.mean <= e.max && e.max.is_finite()) {
                return Err(Error::Fit(format!("bad {op} envelope at stress {}", r.stress_level)));
            }
        }
    }
    let set_curve = fit_curve(&sorted, Op::Set)?;
    let reset_curve = fit_curve(&sorted, Op::Reset)?;
    let mut out = CalibrationProfile {
        name: format!("{}-fit", template.name),
        set_curve,
        reset_curve,
        ..template.clone()
    };
    if sorted.iter().all(|r| r.n_groups >= 2) {
        let (set_sigma, set_spread) = fit_noise(&sorted, Op::Set, template)?;
        let (reset_sigma, reset_spread) = fit_noise(&sorted, Op::Reset, template)?;
        out.set_sigma = set_sigma;
        out.reset_sigma = reset_sigma.max(set_sigma);
        out.set_spread = set_spread;
        out.reset_spread = reset_spread;
    } else {
        log::warn!("single-group records carry no spread information; keeping template noise");
    }
    out.validate().map_err(|e| Error::Fit(e.to_string()))?;
    Ok(out)
}

fn fit_curve(records: &[CharacterizationRecord], op: Op) -> Result<WearCurve> {
    let t0 = records[0].envelope(op).mean;
    let last = records.last().unwrap().envelope(op).mean;
    if !(last > t0 * (1.0 + 1e-9)) {
        return Err(Error::Fit(format!("{op} times do not increase with stress")));
    }
    // Weighted log-space least squares; weights (t - t0)^2 approximate an
    // ordinary least-squares fit in linear space so near-t0 noise does not dominate.
    let pts: Vec<(f64, f64, f64)> = records[1..]
        .iter()
        .filter_map(|r| {
            let d = r.envelope(op).mean - t0;
            (d > 0.0).then(|| ((r.stress_level as f64).ln(), d.ln(), d * d))
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!("{op} times do not increase with stress")));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let mut p = sxy / sxx;
    if !p.is_finite() || p <= 0.0 {
        return Err(Error::Fit(format!("{op} curve is not monotone increasing")));
    }
    if p < 1.0 {
        p = 1.0;
    }
    let a = (my - p * mx).exp();
    Ok(WearCurve { t0, a, p })
}

fn fit_noise(records: &[CharacterizationRecord], op: Op, template: &CalibrationProfile) -> Result<(f64, SpreadCurve)> {
    // Total log-variance per cell sample at each level, from the group-mean range.
    let total: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let e = r.envelope(op);
            let rel = e.range() / (expected_normal_range(r.n_groups) * e.mean);
            (r.stress_level as f64, (rel * rel * r.group_size as f64).ln_1p())
        })
        .collect();
    let meas_var = total[0].1;
    let sigma = meas_var.sqrt();
    let cap = template.spread_cap * 0.95;
    let pts: Vec<(f64, f64)> = total[1..]
        .iter()
        .filter_map(|&(s, v)| {
            let cell = (v - meas_var).max(0.0).sqrt();
            (cell > 0.0 && cell < cap).then(|| ((s / SPREAD_REFERENCE_STRESS).ln(), cell.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return Ok((sigma, SpreadCurve { gain: 0.0, exponent: template.spread(op).exponent }));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit(format!("{op} spread levels are degenerate")));
    }
    let exponent = (sxy / sxx).max(0.0);
    let gain = (my - exponent * mx).exp();
    Ok((sigma, SpreadCurve { gain, exponent }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::ChipGeometry;

    #[test]
    fn normal_range_constants() {
        // Tabulated control-chart constants.
        for (n, d2) in [(2, 1.128), (3, 1.693), (5, 2.326), (8, 2.847), (10, 3.078)] {
            assert!((expected_normal_range(n) - d2).abs() < 1e-3, "n={n}");
        }
        assert_eq!(expected_normal_range(1), 0.0);
    }

    #[test]
    fn level_schedule() {
        assert_eq!(levels(0, 0), vec![0]);
        assert_eq!(levels(10, 5), vec![0, 5, 10]);
        assert_eq!(levels(12, 5), vec![0, 5, 10, 12]);
    }

    #[test]
    fn zero_pairs_gives_one_fresh_record() {
        let mut chip = ChipModel::new(ChipGeometry::with_addresses(1024), CalibrationProfile::default(), 5).unwrap();
        let addrs: Vec<Address> = (0..512).collect();
        let run = characterize(&mut chip, &addrs, 0, 0).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].stress_level, 0);
        assert_eq!(run.records[0].n_groups, 2);
        assert!(!run.truncated);
    }

    #[test]
    fn stress_levels_are_exact() {
        let mut chip = ChipModel::new(ChipGeometry::with_addresses(1024), CalibrationProfile::default(), 5).unwrap();
        let addrs: Vec<Address> = (0..256).collect();
        let run = characterize(&mut chip, &addrs, 3000, 1000).unwrap();
        let got: Vec<u64> = run.records.iter().map(|r| r.stress_level).collect();
        assert_eq!(got, vec![0, 1000, 2000, 3000]);
        assert!(addrs.iter().all(|&a| chip.stress_count(a).unwrap() == 3001));
    }

    #[test]
    fn worn_start_truncates() {
        let mut chip = ChipModel::new(ChipGeometry::with_addresses(512), CalibrationProfile::default(), 5).unwrap();
        let addrs: Vec<Address> = (0..256).collect();
        chip.stress_pairs(&addrs, 990_000).unwrap();
        let run = characterize(&mut chip, &addrs, 30_000, 5_000).unwrap();
        assert!(run.truncated);
        assert_eq!(run.records.len(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let recs = synthesize_records(&CalibrationProfile::default(), &[0, 5000, 10_000], 8, 256);
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs, 42).unwrap();
        assert_eq!(read_records_csv(&buf[..]).unwrap(), recs);
        assert!(String::from_utf8(buf).unwrap().starts_with("stress_level,set_min_s"));
    }

    #[test]
    fn preconditions() {
        let mut chip = ChipModel::new(ChipGeometry::with_addresses(512), CalibrationProfile::default(), 5).unwrap();
        assert!(matches!(characterize(&mut chip, &[], 10, 1), Err(Error::Config(_))));
        assert!(matches!(characterize(&mut chip, &[0], 2_000_000, 1000), Err(Error::Config(_))));
        assert!(matches!(characterize(&mut chip, &[600], 10, 1), Err(Error::OutOfBounds { .. })));
    }
}
