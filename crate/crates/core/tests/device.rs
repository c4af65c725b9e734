use rrsim::device::{load_state, save_state, WriteKind};
use rrsim::{CalibrationProfile, ChipGeometry, ChipModel, Op};

fn chip(addresses: u64, seed: u64) -> ChipModel {
    ChipModel::new(ChipGeometry::with_addresses(addresses), CalibrationProfile::default(), seed).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn default_chip_is_fresh() {
    let c = ChipModel::new(ChipGeometry::default(), CalibrationProfile::default(), 42).unwrap();
    assert_eq!(c.cells().len(), 1 << 20);
    assert!(c.cells().iter().all(|x| x.stress_count() == 0 && x.value == 0xFF));
    assert_eq!(c.clock(), 0.0);
    assert_eq!(c.temperature(), 25.0);
}

#[test]
fn fresh_set_time_matches_profile_mean() {
    let n = 10_000;
    let mut c = chip(n, 7);
    let times: Vec<f64> = (0..n).map(|a| c.timed_write(a, 0x00).unwrap().latency).collect();
    let expected = c.expected_time(Op::Set, 0.0);
    let se = sd(&times) / (n as f64).sqrt();
    assert!((mean(&times) - expected).abs() < 4.0 * se, "mean {} expected {expected} se {se}", mean(&times));
}

#[test]
fn noop_write_costs_noop_time_without_wear() {
    let mut c = chip(16, 1);
    let w = c.timed_write(3, 0xFF).unwrap();
    assert_eq!(w.kind, WriteKind::NoOp);
    assert_eq!(w.latency, c.profile().noop_time);
    assert_eq!(c.stress_count(3).unwrap(), 0);
}

#[test]
fn sibling_mean_at_15k_is_about_250us() {
    let mut c = chip(4096, 11);
    let addrs: Vec<u64> = (1024..1280).collect();
    c.stress_pairs(&addrs, 15_000).unwrap();
    let t = c.measure_trace(&addrs).unwrap();
    let m = mean(&t.times(Op::Set).collect::<Vec<_>>());
    assert!((m - 250e-6).abs() < 15e-6, "mean set time {m}");
}

#[test]
fn buffered_pair_costs_ten_ms() {
    let mut c = chip(1024, 0);
    let t = c.buffered_write(0, &[0x00; 256]).unwrap() + c.buffered_write(0, &[0xFF; 256]).unwrap();
    assert!((t - 0.010).abs() < 1e-12);
    assert!(c.cells()[..256].iter().all(|x| x.stress_count() == 1));
    c.buffered_write(0, &[0xFF; 256]).unwrap();
    assert!(c.cells()[..256].iter().all(|x| x.stress_count() == 1));
}

#[test]
fn stress_pairs_accounting() {
    let mut c = chip(1024, 0);
    let addrs: Vec<u64> = (256..512).collect();
    c.stress_pairs(&addrs, 15_000).unwrap();
    assert!(addrs.iter().all(|&a| c.stress_count(a).unwrap() == 15_000));
    assert_eq!(c.stress_count(0).unwrap(), 0);
}

#[test]
fn trace_shape_and_wear() {
    let mut c = chip(8192, 3);
    let addrs: Vec<u64> = (0..8192).collect();
    let t = c.measure_trace(&addrs).unwrap();
    assert_eq!(t.len(), 8192);
    assert!(t.entries.iter().zip(&addrs).all(|(e, &a)| e.address == a && e.set_time > 0.0 && e.reset_time > 0.0));
    assert!(c.measure_trace(&[]).unwrap().is_empty());
    c.measure_trace(&[5]).unwrap();
    assert_eq!(c.stress_count(5).unwrap(), 2);
}

#[test]
fn temperature_shift_is_small_against_separation_gap() {
    let mut base = chip(2048, 5);
    let stressed: Vec<u64> = (0..256).collect();
    let fresh: Vec<u64> = (512..768).collect();
    base.stress_pairs(&stressed, 15_000).unwrap();
    let set_mean = |c: &mut ChipModel, a: &[u64]| mean(&c.measure_trace(a).unwrap().times(Op::Set).collect::<Vec<_>>());

    let mut cold = base.clone();
    let gap = set_mean(&mut cold, &stressed) - set_mean(&mut base.clone(), &fresh);
    let mut hot = base.clone();
    hot.set_temperature(80.0).unwrap();
    let shift = (set_mean(&mut hot, &stressed) - set_mean(&mut base.clone(), &stressed)).abs();
    assert!(gap > 0.0);
    assert!(shift <= 0.02 * gap, "shift {shift} gap {gap}");

    let mut same = base.clone();
    same.set_temperature(25.0).unwrap();
    assert_eq!(same.measure_trace(&stressed).unwrap(), base.clone().measure_trace(&stressed).unwrap());
    assert!(base.set_temperature(100.0).is_err());
}

#[test]
fn same_seed_same_samples() {
    let mut a = chip(64, 99);
    let mut b = chip(64, 99);
    let mut c = chip(64, 100);
    let ta = a.timed_write(10, 0x00).unwrap();
    assert_eq!(ta, b.timed_write(10, 0x00).unwrap());
    assert_ne!(ta.latency, c.timed_write(10, 0x00).unwrap().latency);
}

#[test]
fn persisted_chip_replays_identically() {
    let mut c = chip(4096, 21);
    let addrs: Vec<u64> = (100..400).collect();
    c.stress_pairs(&addrs, 2_000).unwrap();
    c.set_temperature(40.0).unwrap();
    c.timed_write(7, 0x0F).unwrap();
    let bytes = save_state(&c);
    let mut r = load_state(&bytes, CalibrationProfile::default()).unwrap();
    assert_eq!(r, c);
    assert_eq!(r.measure_trace(&addrs).unwrap(), c.measure_trace(&addrs).unwrap());
    assert!(load_state(&bytes[..bytes.len() / 2], CalibrationProfile::default()).is_err());
}

#[test]
fn worn_cells_refuse_timed_writes() {
    let mut c = chip(16, 0);
    let max = c.profile().endurance_max;
    c.stress_pairs(&[2], max).unwrap();
    assert!(c.timed_write(2, 0x00).is_ok());
    c.timed_write(2, 0xFF).unwrap();
    assert!(matches!(c.timed_write(2, 0x00), Err(rrsim::Error::WornOut { address: 2 })));
    assert!(c.stress_pairs(&[3], max + 1).is_err());
}
