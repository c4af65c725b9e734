use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{SeparationReport, SweepRow};
use super::{simulate_usage, UsagePattern};
use crate::calibration::{CalibrationProfile, Op};
use crate::codec::{encode, generate_key, kmeans2, plan_addresses, DecodeConfig, DecodeMethod, HidingKey, Payload};
use crate::device::{ChipGeometry, ChipModel};
use crate::error::{Error, Result};

/// Shared setup for repeated hide-and-measure experiments on simulated chips.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub profile: Arc<CalibrationProfile>,
    pub geometry: ChipGeometry,
    pub base_address: u64,
    pub replica_size: u64,
    pub payload: Payload,
    pub method: DecodeMethod,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            profile: Arc::new(CalibrationProfile::default()),
            geometry: ChipGeometry::with_addresses(1 << 17),
            base_address: 65_536,
            replica_size: 256,
            payload: Payload::from_u64(0xECE3_038B, 32).expect("valid"),
            method: DecodeMethod::KMeans2,
        }
    }
}

impl Experiment {
    pub fn chip(&self, seed: u64) -> Result<ChipModel> {
        ChipModel::new(self.geometry, Arc::clone(&self.profile), seed)
    }

    pub fn key(&self, n: u64) -> Result<HidingKey> {
        generate_key(&self.geometry, self.payload.len(), self.base_address, self.replica_size, 1, n, 0)
    }

    pub fn footprint(&self) -> std::ops::Range<u64> {
        self.base_address..self.base_address + self.payload.len() as u64 * self.replica_size
    }

    /// Fresh chip with the payload hidden at `n` pairs.
    pub fn hidden(&self, seed: u64, n: u64) -> Result<(ChipModel, HidingKey)> {
        let mut chip = self.chip(seed)?;
        let key = self.key(n)?;
        encode(&mut chip, &key, &self.payload)?;
        Ok((chip, key))
    }

    /// Decode and score against the payload.
    pub fn decode_report(&self, chip: &mut ChipModel, key: &HidingKey, op: Op) -> Result<SeparationReport> {
        let config = DecodeConfig { method: self.method.clone(), signal: op };
        super::honest_report(chip, key, &self.payload, &config)
    }

    fn row(&self, sweep_id: String, n: u64, post: u64, op: Op, size: u64, r: &SeparationReport) -> SweepRow {
        SweepRow {
            sweep_id,
            n,
            post_stress: post,
            op,
            replica_size: size,
            min_distance_s: r.min_distance,
            ber: r.ber,
            errors: r.bit_error_count,
        }
    }
}

/// Largest grid value reached before the first report with more than
/// `max_errors` threshold errors; zero when the first point already fails.
pub fn tolerance(grid: &[u64], reports: &[SeparationReport], max_errors: usize) -> u64 {
    let mut last = 0;
    for (&s, r) in grid.iter().zip(reports) {
        if r.threshold_errors > max_errors {
            return last;
        }
        last = s;
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub op: Op,
    /// Per chip: post-hiding stress survived with zero errors, at most one, at most two.
    pub zero_error: Vec<u64>,
    pub max_one_error: Vec<u64>,
    pub max_two_errors: Vec<u64>,
}

fn mean(v: &[u64]) -> f64 {
    v.iter().sum::<u64>() as f64 / v.len().max(1) as f64
}

impl ToleranceRow {
    pub fn mean_zero_error(&self) -> f64 {
        mean(&self.zero_error)
    }

    pub fn mean_max_one_error(&self) -> f64 {
        mean(&self.max_one_error)
    }

    pub fn mean_max_two_errors(&self) -> f64 {
        mean(&self.max_two_errors)
    }
}

#[derive(Debug, Clone)]
pub struct PostHidingSweep {
    pub rows: Vec<SweepRow>,
    pub table: Vec<ToleranceRow>,
}

/// For each `n` and chip: hide, apply `post_stress` usage on a clone, decode.
pub fn sweep_post_hiding(
    exp: &Experiment,
    ns: &[u64],
    grid: &[u64],
    op: Op,
    chip_seeds: &[u64],
    pattern: UsagePattern,
) -> Result<PostHidingSweep> {
    let jobs: Vec<(u64, u64)> = ns.iter().flat_map(|&n| chip_seeds.iter().map(move |&s| (n, s))).collect();
    let results: Vec<Vec<SeparationReport>> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let (hidden, key) = exp.hidden(seed, n)?;
            grid.iter()
                .map(|&post| {
                    let mut chip = hidden.clone();
                    simulate_usage(&mut chip, pattern, post, exp.footprint(), seed)?;
                    exp.decode_report(&mut chip, &key, op)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (&(n, seed), reports) in jobs.iter().zip(&results) {
        for (&post, r) in grid.iter().zip(reports) {
            rows.push(exp.row(format!("post_hiding:{seed}"), n, post, op, exp.replica_size, r));
        }
    }
    let table = ns
        .iter()
        .map(|&n| {
            let per_chip: Vec<&Vec<SeparationReport>> =
                jobs.iter().zip(&results).filter(|((m, _), _)| *m == n).map(|(_, r)| r).collect();
            let tol = |k| per_chip.iter().map(|r| tolerance(grid, r, k)).collect();
            ToleranceRow { n, op, zero_error: tol(0), max_one_error: tol(1), max_two_errors: tol(2) }
        })
        .collect();
    Ok(PostHidingSweep { rows, table })
}

#[derive(Debug, Clone)]
pub struct ReplicaSweep {
    pub sizes: Vec<u64>,
    pub rows: Vec<SweepRow>,
    /// `reports[trial][size index]`.
    pub reports: Vec<Vec<SeparationReport>>,
}

impl ReplicaSweep {
    /// Smallest size from which every larger swept size also separates.
    pub fn stable_min_separable(&self, trial: usize) -> Option<u64> {
        let r = &self.reports[trial];
        let mut best = None;
        for i in (0..self.sizes.len()).rev() {
            if !r[i].separable() {
                break;
            }
            best = Some(self.sizes[i]);
        }
        best
    }

    pub fn separable_fraction(&self, size_index: usize) -> f64 {
        let n = self.reports.iter().filter(|r| r[size_index].separable()).count();
        n as f64 / self.reports.len().max(1) as f64
    }

    pub fn mean_min_distance(&self, size_index: usize) -> f64 {
        self.reports.iter().map(|r| r[size_index].min_distance).sum::<f64>() / self.reports.len().max(1) as f64
    }
}

/// Hides with the experiment's replica size, then scores decodes that use
/// only the first `size` addresses of every replica group.
pub fn sweep_replica_size(exp: &Experiment, sizes: &[u64], op: Op, n: u64, seeds: &[u64]) -> Result<ReplicaSweep> {
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > exp.replica_size) {
        return Err(Error::config(format!("replica size {bad} outside 1..={}", exp.replica_size)));
    }
    let reports: Vec<Vec<SeparationReport>> = seeds
        .par_iter()
        .map(|&seed| {
            let (mut chip, key) = exp.hidden(seed, n)?;
            let plan = plan_addresses(&key, chip.geometry())?;
            let mut per_bit = Vec::with_capacity(plan.bits.len());
            for addrs in &plan.bits {
                per_bit.push(chip.measure_trace(addrs)?.times(op).collect::<Vec<f64>>());
            }
            sizes
                .iter()
                .map(|&size| {
                    let means: Vec<f64> =
                        per_bit.iter().map(|t| t[..size as usize].iter().sum::<f64>() / size as f64).collect();
                    let decoded = classify_means(&means, &exp.method)?;
                    SeparationReport::new(&means, &exp.payload, &decoded)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (&seed, trial) in seeds.iter().zip(&reports) {
        for (&size, r) in sizes.iter().zip(trial) {
            rows.push(exp.row(format!("replica_size:{seed}"), n, 0, op, size, r));
        }
    }
    Ok(ReplicaSweep { sizes: sizes.to_vec(), rows, reports })
}

fn classify_means(means: &[f64], method: &DecodeMethod) -> Result<Payload> {
    let bits = match method {
        DecodeMethod::Threshold(t) => means.iter().map(|m| m > t).collect(),
        DecodeMethod::KMeans2 => match kmeans2(means) {
            Ok(k) => k.labels,
            Err(Error::SingleCluster) => vec![false; means.len()],
            Err(e) => return Err(e),
        },
        DecodeMethod::Reference(_) => return Err(Error::config("reference decode is not available on precomputed means")),
    };
    Payload::from_bits(bits)
}

#[derive(Debug, Clone)]
pub struct InitialStressSweep {
    pub grid: Vec<u64>,
    pub rows: Vec<SweepRow>,
    /// `reports[grid index][trial]`.
    pub reports: Vec<Vec<SeparationReport>>,
}

impl InitialStressSweep {
    pub fn mean_ber(&self, grid_index: usize) -> f64 {
        let r = &self.reports[grid_index];
        r.iter().map(|x| x.ber).sum::<f64>() / r.len().max(1) as f64
    }
}

/// Pre-wears the footprint by `initial` pairs, then hides and decodes.
pub fn sweep_initial_stress(
    exp: &Experiment,
    grid: &[u64],
    n: u64,
    op: Op,
    seeds: &[u64],
    pattern: UsagePattern,
) -> Result<InitialStressSweep> {
    let jobs: Vec<(u64, u64)> = grid.iter().flat_map(|&g| seeds.iter().map(move |&s| (g, s))).collect();
    let flat: Vec<SeparationReport> = jobs
        .par_iter()
        .map(|&(initial, seed)| {
            let mut chip = exp.chip(seed)?;
            simulate_usage(&mut chip, pattern, initial, exp.footprint(), seed)?;
            let key = exp.key(n)?;
            encode(&mut chip, &key, &exp.payload)?;
            exp.decode_report(&mut chip, &key, op)
        })
        .collect::<Result<_>>()?;
    let rows = jobs
        .iter()
        .zip(&flat)
        .map(|(&(initial, seed), r)| exp.row(format!("initial_stress:{seed}:{initial}"), n, 0, op, exp.replica_size, r))
        .collect();
    let reports = flat.chunks(seeds.len().max(1)).map(|c| c.to_vec()).collect();
    Ok(InitialStressSweep { grid: grid.to_vec(), rows, reports })
}
