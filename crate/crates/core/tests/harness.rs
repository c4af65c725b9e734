use std::sync::Arc;

use rrsim::harness::{
    age_retention, attack_wrong_base, bake, honest_report, simulate_usage, sweep_post_hiding, write_csv, Experiment,
    OffsetMode, UsagePattern, CSV_HEADER,
};
use rrsim::{CalibrationProfile, ChipGeometry, ChipModel, DecodeConfig, Op};

fn chip(seed: u64) -> ChipModel {
    ChipModel::new(ChipGeometry::with_addresses(1 << 14), CalibrationProfile::default(), seed).unwrap()
}

#[test]
fn worst_case_usage_accounting() {
    let mut c = chip(0);
    simulate_usage(&mut c, UsagePattern::WorstCaseToggle, 50_000, 100..356, 0).unwrap();
    assert!((100..356).all(|a| c.stress_count(a).unwrap() == 50_000));
    assert_eq!(c.stress_count(99).unwrap(), 0);
    let before = c.clone();
    simulate_usage(&mut c, UsagePattern::WorstCaseToggle, 0, 0..1000, 0).unwrap();
    assert_eq!(c, before);
}

#[test]
fn realistic_usage_wears_low_bits_more() {
    let mut c = chip(4);
    simulate_usage(&mut c, UsagePattern::realistic(), 20_000, 0..4096, 8).unwrap();
    let mean_bit = |b: usize| c.cells()[..4096].iter().map(|x| x.bit_stress[b] as f64).sum::<f64>() / 4096.0;
    let (lsb, msb) = (mean_bit(0), mean_bit(7));
    assert!(lsb > msb, "lsb {lsb} msb {msb}");
    let p = UsagePattern::realistic().toggle_probabilities();
    assert!((lsb - 20_000.0 * p[0]).abs() < 0.01 * 20_000.0 * p[0]);
}

#[test]
fn retention_is_neutral_by_default_and_follows_configured_drift() {
    let exp = Experiment::default();
    let (hidden, key) = exp.hidden(12, 15_000).unwrap();
    let cfg = DecodeConfig::default();

    let mut baseline = hidden.clone();
    let mut aged = hidden.clone();
    age_retention(&mut aged, 0.0).unwrap();
    assert_eq!(aged, hidden);
    age_retention(&mut aged, 61.0 * 86_400.0).unwrap();
    let b = rrsim::decode(&mut baseline, &key, &cfg).unwrap();
    let r = rrsim::decode(&mut aged, &key, &cfg).unwrap();
    assert_eq!(r.means, b.means);
    assert_eq!(r.bits, exp.payload);

    let drift = 1e-3;
    let profile = CalibrationProfile { retention_drift_per_day: drift, ..CalibrationProfile::default() };
    let drifting = Experiment { profile: Arc::new(profile), ..Experiment::default() };
    let (hidden, key) = drifting.hidden(12, 15_000).unwrap();
    let mut fresh = hidden.clone();
    let mut aged = hidden;
    age_retention(&mut aged, 10.0 * 86_400.0).unwrap();
    let f = rrsim::decode(&mut fresh, &key, &cfg).unwrap();
    let a = rrsim::decode(&mut aged, &key, &cfg).unwrap();
    for (x, y) in a.means.iter().zip(&f.means) {
        assert!((x / y - (1.0 + 10.0 * drift)).abs() < 1e-12);
    }
}

#[test]
fn bake_records_history_and_accelerates_drift() {
    let mut c = chip(1);
    bake(&mut c, 80.0, 86_400.0).unwrap();
    assert_eq!(c.thermal_history().len(), 1);
    assert_eq!(c.aging_factor(), 1.0);
    assert!(bake(&mut c, 120.0, 10.0).is_err());

    let profile = CalibrationProfile { retention_drift_per_day: 1e-4, ..CalibrationProfile::default() };
    let mut d = ChipModel::new(ChipGeometry::with_addresses(64), profile, 0).unwrap();
    bake(&mut d, 45.0, 86_400.0).unwrap();
    assert!((d.aging_factor() - (1.0 + 4.0 * 1e-4)).abs() < 1e-12);
}

#[test]
fn baked_chip_decodes_hot() {
    let exp = Experiment::default();
    for n in [15_000, 30_000, 45_000] {
        let (mut c, key) = exp.hidden(40, n).unwrap();
        bake(&mut c, 80.0, 86_400.0).unwrap();
        c.set_temperature(80.0).unwrap();
        let r = honest_report(&mut c, &key, &exp.payload, &DecodeConfig::default()).unwrap();
        assert_eq!(r.bit_error_count, 0, "N={n}");
    }
}

#[test]
fn zero_offset_equals_honest_decode() {
    let exp = Experiment::default();
    let (c, key) = exp.hidden(3, 15_000).unwrap();
    let cfg = DecodeConfig::default();
    let honest = honest_report(&mut c.clone(), &key, &exp.payload, &cfg).unwrap();
    let zero = attack_wrong_base(&mut c.clone(), &key, &exp.payload, OffsetMode::Custom(0), &cfg).unwrap();
    assert_eq!(honest, zero);
    let shifted = attack_wrong_base(&mut c.clone(), &key, &exp.payload, OffsetMode::Case3, &cfg).unwrap();
    assert!(shifted.min_distance < 0.0);
}

#[test]
fn post_hiding_sweep_shape() {
    let exp = Experiment::default();
    let grid: Vec<u64> = (0..=300_000).step_by(10_000).collect();
    let sweep = sweep_post_hiding(&exp, &[15_000, 30_000, 45_000], &grid, Op::Set, &[0, 1], UsagePattern::WorstCaseToggle)
        .unwrap();
    assert_eq!(sweep.rows.len(), 3 * 2 * grid.len());
    for t in &sweep.table {
        for chip in 0..2 {
            assert!(t.zero_error[chip] <= t.max_one_error[chip]);
            assert!(t.max_one_error[chip] <= t.max_two_errors[chip]);
        }
    }
    let z: Vec<f64> = sweep.table.iter().map(|t| t.mean_zero_error()).collect();
    assert!(z[0] <= z[1] && z[1] <= z[2], "{z:?}");

    let empty = sweep_post_hiding(&exp, &[15_000], &[], Op::Set, &[0], UsagePattern::WorstCaseToggle).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &empty.rows).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER.join(","));
}
