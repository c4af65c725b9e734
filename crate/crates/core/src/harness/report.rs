use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::Op;
use crate::codec::Payload;
use crate::error::{Error, Result};

/// Separation of bit means by their true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Every `mean(b1_j) - mean(b0_i)`, ordered by 0-bit then 1-bit position.
    pub distances: Vec<f64>,
    /// Smallest distance; infinite when either class is empty.
    pub min_distance: f64,
    /// Errors of the decode that produced `decoded`.
    pub bit_error_count: usize,
    /// Errors of the best possible single threshold given the true bits.
    pub threshold_errors: usize,
    pub ber: f64,
}

impl SeparationReport {
    pub fn new(means: &[f64], truth: &Payload, decoded: &Payload) -> Result<Self> {
        if means.len() != truth.len() || decoded.len() != truth.len() {
            return Err(Error::config("bit means, truth and decode must have equal length"));
        }
        let bits = truth.bits();
        let zeros: Vec<f64> = means.iter().zip(bits).filter(|(_, &b)| !b).map(|(&m, _)| m).collect();
        let ones: Vec<f64> = means.iter().zip(bits).filter(|(_, &b)| b).map(|(&m, _)| m).collect();
        let distances: Vec<f64> = zeros.iter().flat_map(|z| ones.iter().map(move |o| o - z)).collect();
        let min_distance = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let bit_error_count = truth.hamming(decoded);
        Ok(Self {
            distances,
            min_distance,
            bit_error_count,
            threshold_errors: optimal_threshold_errors(means, bits),
            ber: bit_error_count as f64 / truth.len() as f64,
        })
    }

    pub fn separable(&self) -> bool {
        self.min_distance > 0.0
    }
}

/// Fewest misclassifications achievable by labelling `mean > t` as 1 for some `t`.
pub fn optimal_threshold_errors(means: &[f64], truth: &[bool]) -> usize {
    let mut idx: Vec<usize> = (0..means.len()).collect();
    idx.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    let zeros_total = truth.iter().filter(|&&b| !b).count();
    // Threshold below position k: errors = ones at or below k-1 + zeros from k.
    let (mut ones_below, mut zeros_below) = (0, 0);
    let mut best = zeros_total;
    let mut k = 0;
    while k < idx.len() {
        // Equal means cannot be split by a threshold.
        let mut j = k;
        while j < idx.len() && means[idx[j]] == means[idx[k]] {
            if truth[idx[j]] {
                ones_below += 1;
            } else {
                zeros_below += 1;
            }
            j += 1;
        }
        best = best.min(ones_below + zeros_total - zeros_below);
        k = j;
    }
    best
}

/// One line of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_id: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub post_stress: u64,
    pub op: Op,
    pub replica_size: u64,
    pub min_distance_s: f64,
    pub ber: f64,
    pub errors: usize,
}

pub const CSV_HEADER: [&str; 8] = ["sweep_id", "N", "post_stress", "op", "replica_size", "min_distance_s", "ber", "errors"];

pub fn write_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<std::path::Path>, rows: &[SweepRow]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_errors_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let n = rng.random_range(1..12);
            let means: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let mut cuts: Vec<f64> = means.clone();
            cuts.push(-1.0);
            let brute = cuts
                .iter()
                .map(|&t| means.iter().zip(&truth).filter(|(&m, &b)| (m > t) != b).count())
                .min()
                .unwrap();
            assert_eq!(optimal_threshold_errors(&means, &truth), brute);
        }
    }

    #[test]
    fn zero_threshold_errors_iff_positive_min_distance() {
        let truth = Payload::from_hex("0b0110").unwrap();
        let r = SeparationReport::new(&[1.0, 3.0, 2.0, 4.0], &truth, &truth).unwrap();
        assert_eq!(r.distances, vec![2.0, 1.0, -1.0, -2.0]);
        assert_eq!(r.min_distance, -2.0);
        assert!(!r.separable());
        assert_eq!(r.threshold_errors, 1);
        let decoded = Payload::from_hex("0b0101").unwrap();
        let r = SeparationReport::new(&[1.0, 3.0, 2.0, 4.0], &Payload::from_hex("0b0111").unwrap(), &decoded).unwrap();
        assert_eq!(r.min_distance, 1.0);
        assert_eq!(r.threshold_errors, 0);
        assert_eq!(r.bit_error_count, 1);
        assert_eq!(r.ber, 0.25);
    }

    #[test]
    fn empty_class_is_infinitely_separated() {
        let t = Payload::from_hex("0b000").unwrap();
        let r = SeparationReport::new(&[1.0, 2.0, 3.0], &t, &t).unwrap();
        assert!(r.min_distance.is_infinite() && r.threshold_errors == 0);
    }

    #[test]
    fn csv_header_only_for_no_rows() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sweep_id,N,post_stress,op,replica_size,min_distance_s,ber,errors\n");
    }

    #[test]
    fn csv_row() {
        let row = SweepRow {
            sweep_id: "post_hiding".into(),
            n: 15000,
            post_stress: 10000,
            op: Op::Reset,
            replica_size: 256,
            min_distance_s: 1.5e-5,
            ber: 0.0,
            errors: 0,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "post_hiding,15000,10000,reset,256,0.000015,0.0,0");
    }
}
