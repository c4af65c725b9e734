//! Hiding bit-strings in cell wear and reading them back from timing.
//!
//! Encoding stresses the cells that carry 1-bits; decoding measures one
//! set-reset pair on every planned cell, averages the latency per payload bit
//! and splits the averages into a fast (fresh, 0) and a slow (stressed, 1) class.

mod ecc;
mod kmeans;

pub use ecc::{apply_ecc, strip_ecc, EccScheme};
pub use kmeans::{kmeans2, TwoClusters};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::Op;
use crate::device::{Address, ChipGeometry, ChipModel, ERASED};
use crate::error::{Error, Result};

pub const KEY_VERSION: u32 = 1;

/// Centroid gap, in pooled within-cluster standard deviations, below which a
/// k-means decode is reported as ambiguous.
pub const AMBIGUITY_SEPARATION: f64 = 4.0;

/// Bit-string, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    bits: Vec<bool>,
}

impl Payload {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::config("payload must have at least one bit"));
        }
        Ok(Self { bits })
    }

    pub fn from_u64(value: u64, len: usize) -> Result<Self> {
        if len == 0 || len > 64 {
            return Err(Error::config("payload length must be 1..=64 for an integer payload"));
        }
        Self::from_bits((0..len).rev().map(|i| value >> i & 1 == 1).collect())
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::from_bits((0..len).map(|_| rng.random()).collect())
    }

    /// Parses `0x…` hex (4 bits per digit) or `0b…` binary.
    pub fn from_hex(text: &str) -> Result<Self> {
        let t = text.trim();
        let bad = || Error::config(format!("invalid payload `{text}`"));
        if let Some(bin) = t.strip_prefix("0b").or_else(|| t.strip_prefix("0B")) {
            let bits = bin
                .chars()
                .filter(|&c| c != '_')
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            return Self::from_bits(bits);
        }
        let hex = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for c in hex.chars().filter(|&c| c != '_') {
            let d = c.to_digit(16).ok_or_else(bad)?;
            bits.extend((0..4).rev().map(|i| d >> i & 1 == 1));
        }
        Self::from_bits(bits)
    }

    /// Canonical text form: upper-case hex when the length is a multiple of
    /// four, binary otherwise.
    pub fn to_hex(&self) -> String {
        if self.bits.len() % 4 != 0 {
            return format!("0b{}", self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>());
        }
        let digits: String = self
            .bits
            .chunks(4)
            .map(|n| {
                let d = n.iter().fold(0u32, |acc, &b| acc << 1 | b as u32);
                char::from_digit(d, 16).unwrap().to_ascii_uppercase()
            })
            .collect();
        format!("0x{digits}")
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Left circular rotation: position `j` of the result holds bit `(j + k) mod B`.
    pub fn rotate(&self, k: usize) -> Self {
        let mut bits = self.bits.clone();
        bits.rotate_left(k % self.bits.len());
        Self { bits }
    }

    pub fn derotate(&self, k: usize) -> Self {
        let mut bits = self.bits.clone();
        bits.rotate_right(k % self.bits.len());
        Self { bits }
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count() + self.len().abs_diff(other.len())
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Payload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_hex(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    /// Bit `i` owns `replica_size` consecutive addresses starting at `base + i * replica_size`.
    Block,
    /// `replica_count` rows, each a circularly rotated copy of the payload.
    ReplicaRow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HidingKey {
    pub version: u32,
    pub base_address: Address,
    pub replica_size: u64,
    pub replica_count: u64,
    pub rotations: Vec<usize>,
    pub payload_length: usize,
    pub stress_count: u64,
    pub layout_mode: LayoutMode,
}

impl HidingKey {
    pub fn footprint(&self) -> u64 {
        self.payload_length as u64 * self.replica_size * self.replica_count
    }

    /// Addresses averaged per payload bit across all replicas.
    pub fn cells_per_bit(&self) -> u64 {
        self.replica_size * self.replica_count
    }

    pub fn validate(&self, geometry: &ChipGeometry) -> Result<()> {
        if self.version != KEY_VERSION {
            return Err(Error::format(format!("key version {} not supported", self.version)));
        }
        if self.payload_length == 0 || self.replica_size == 0 || self.replica_count == 0 {
            return Err(Error::config("payload length, replica size and replica count must be positive"));
        }
        if self.rotations.len() as u64 != self.replica_count {
            return Err(Error::config(format!(
                "key has {} rotations for {} replicas",
                self.rotations.len(),
                self.replica_count
            )));
        }
        if let Some(k) = self.rotations.iter().find(|&&k| k >= self.payload_length) {
            return Err(Error::config(format!("rotation {k} outside 0..{}", self.payload_length)));
        }
        if self.layout_mode == LayoutMode::Block && (self.replica_count != 1 || self.rotations[0] != 0) {
            return Err(Error::config("block layout holds a single unrotated replica"));
        }
        check_footprint(geometry, self.base_address, self.payload_length, self.replica_size, self.replica_count)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("bad key file: {e}")))
    }
}

fn check_footprint(geometry: &ChipGeometry, base: Address, bits: usize, size: u64, count: u64) -> Result<()> {
    let footprint = (bits as u64).checked_mul(size).and_then(|x| x.checked_mul(count));
    let fits = footprint.and_then(|f| f.checked_add(base)).is_some_and(|end| end <= geometry.address_count);
    if !fits {
        return Err(Error::config(format!(
            "hiding footprint of {bits} x {size} x {count} addresses at {base} does not fit a {}-address chip",
            geometry.address_count
        )));
    }
    Ok(())
}

/// Draws a key. One replica uses the plain block layout; more replicas use
/// rotated rows with displacements uniform on `0..payload_length`.
pub fn generate_key(
    geometry: &ChipGeometry,
    payload_length: usize,
    base_address: Address,
    replica_size: u64,
    replica_count: u64,
    stress_count: u64,
    seed: u64,
) -> Result<HidingKey> {
    let layout = if replica_count == 1 { LayoutMode::Block } else { LayoutMode::ReplicaRow };
    generate_key_with_layout(geometry, layout, payload_length, base_address, replica_size, replica_count, stress_count, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn generate_key_with_layout(
    geometry: &ChipGeometry,
    layout_mode: LayoutMode,
    payload_length: usize,
    base_address: Address,
    replica_size: u64,
    replica_count: u64,
    stress_count: u64,
    seed: u64,
) -> Result<HidingKey> {
    if payload_length == 0 {
        return Err(Error::config("payload must have at least one bit"));
    }
    if replica_size == 0 || replica_count == 0 {
        return Err(Error::config("replica size and replica count must be positive"));
    }
    check_footprint(geometry, base_address, payload_length, replica_size, replica_count)?;
    let rotations = match layout_mode {
        LayoutMode::Block => vec![0],
        LayoutMode::ReplicaRow => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..replica_count).map(|_| rng.random_range(0..payload_length)).collect()
        }
    };
    let key = HidingKey {
        version: KEY_VERSION,
        base_address,
        replica_size,
        replica_count,
        rotations,
        payload_length,
        stress_count,
        layout_mode,
    };
    key.validate(geometry)?;
    Ok(key)
}

/// Maps a logical footprint offset to a physical offset inside the footprint.
/// Must be a bijection on `0..footprint`.
pub trait AddressPermutation {
    fn permute(&self, offset: u64, footprint: u64) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl AddressPermutation for Identity {
    fn permute(&self, offset: u64, _footprint: u64) -> u64 {
        offset
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressPlan {
    /// Addresses holding each payload bit, across all replicas.
    pub bits: Vec<Vec<Address>>,
}

impl AddressPlan {
    /// Every planned address with its payload bit, in ascending address order.
    pub fn measurement_order(&self) -> Vec<(Address, usize)> {
        let mut v: Vec<(Address, usize)> =
            self.bits.iter().enumerate().flat_map(|(b, addrs)| addrs.iter().map(move |&a| (a, b))).collect();
        v.sort_unstable();
        v
    }

    pub fn addresses(&self) -> Vec<Address> {
        self.measurement_order().into_iter().map(|(a, _)| a).collect()
    }

    pub fn addresses_for(&self, payload: &Payload, value: bool) -> Vec<Address> {
        let mut v: Vec<Address> = self
            .bits
            .iter()
            .zip(payload.bits())
            .filter(|(_, &b)| b == value)
            .flat_map(|(a, _)| a.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }
}

pub fn plan_addresses(key: &HidingKey, geometry: &ChipGeometry) -> Result<AddressPlan> {
    plan_addresses_with(key, geometry, &Identity)
}

pub fn plan_addresses_with(key: &HidingKey, geometry: &ChipGeometry, perm: &dyn AddressPermutation) -> Result<AddressPlan> {
    key.validate(geometry)?;
    let b = key.payload_length as u64;
    let s = key.replica_size;
    let footprint = key.footprint();
    let mut bits = vec![Vec::with_capacity(key.cells_per_bit() as usize); key.payload_length];
    for (r, &k) in key.rotations.iter().enumerate() {
        let row = r as u64 * b * s;
        for j in 0..b {
            let bit = ((j + k as u64) % b) as usize;
            for i in 0..s {
                let offset = perm.permute(row + j * s + i, footprint);
                if offset >= footprint {
                    return Err(Error::config("address permutation left the footprint"));
                }
                bits[bit].push(key.base_address + offset);
            }
        }
    }
    let plan = AddressPlan { bits };
    let mut all = plan.addresses();
    all.dedup();
    if all.len() as u64 != footprint {
        return Err(Error::config("address permutation is not a bijection"));
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    /// `N * B * pair_time`, charging every message bit regardless of value.
    pub formula_seconds: f64,
    /// Simulated time the chip actually spent, init writes included.
    pub device_seconds: f64,
    pub pairs_applied: u64,
    pub stressed_addresses: usize,
    pub endurance_cost: f64,
}

pub fn encode(chip: &mut ChipModel, key: &HidingKey, payload: &Payload) -> Result<EncodeReport> {
    encode_with(chip, key, payload, &Identity)
}

pub fn encode_with(chip: &mut ChipModel, key: &HidingKey, payload: &Payload, perm: &dyn AddressPermutation) -> Result<EncodeReport> {
    if payload.len() != key.payload_length {
        return Err(Error::config(format!("payload has {} bits, key expects {}", payload.len(), key.payload_length)));
    }
    let plan = plan_addresses_with(key, chip.geometry(), perm)?;
    let all = plan.addresses();
    let prior: u64 = all.iter().map(|&a| chip.stress_count(a).map(u64::from)).sum::<Result<u64>>()?;
    if prior > 0 {
        log::warn!("target cells are not fresh: mean prior stress {:.1} pairs", prior as f64 / all.len() as f64);
    }
    let ones = plan.addresses_for(payload, true);
    let worn = chip.would_wear_out(&ones, key.stress_count)?;
    if !worn.is_empty() {
        return Err(Error::EncodeWearOut { addresses: worn });
    }
    let start = chip.clock();
    chip.program(&all, ERASED)?;
    chip.stress_pairs(&ones, key.stress_count)?;
    let profile = chip.profile();
    Ok(EncodeReport {
        formula_seconds: key.stress_count as f64 * key.payload_length as f64 * profile.pair_time,
        device_seconds: chip.clock() - start,
        pairs_applied: if ones.is_empty() { 0 } else { key.stress_count },
        stressed_addresses: ones.len(),
        endurance_cost: key.stress_count as f64 / profile.endurance_rated as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeMethod {
    Threshold(f64),
    KMeans2,
    /// Threshold derived from cells known to have seen the same usage as the
    /// payload cells but no hiding stress.
    Reference(Vec<Address>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    pub signal: Op,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { method: DecodeMethod::KMeans2, signal: Op::Set }
    }
}

impl DecodeConfig {
    pub fn kmeans(signal: Op) -> Self {
        Self { method: DecodeMethod::KMeans2, signal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdUsed {
    Value { threshold: f64 },
    Centroids { low: f64, high: f64 },
    Reference { reference_mean: f64, estimated_usage: f64, threshold: f64 },
}

impl ThresholdUsed {
    pub fn threshold(&self) -> f64 {
        match *self {
            ThresholdUsed::Value { threshold } | ThresholdUsed::Reference { threshold, .. } => threshold,
            ThresholdUsed::Centroids { low, high } => 0.5 * (low + high),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub bits: Payload,
    /// Mean latency per payload bit position, in seconds.
    pub means: Vec<f64>,
    pub threshold: ThresholdUsed,
    /// Smallest distance of any bit mean from the decision threshold.
    pub confidence: f64,
    pub ambiguous: bool,
}

/// Per-bit mean latency over the plan, measured in ascending address order.
pub fn measure_bit_means(chip: &mut ChipModel, plan: &AddressPlan, signal: Op) -> Result<Vec<f64>> {
    let order = plan.measurement_order();
    let addrs: Vec<Address> = order.iter().map(|&(a, _)| a).collect();
    let trace = chip.measure_trace(&addrs)?;
    let mut sums = vec![0.0; plan.bits.len()];
    for ((_, bit), t) in order.iter().zip(trace.times(signal)) {
        sums[*bit] += t;
    }
    Ok(sums.iter().zip(&plan.bits).map(|(s, a)| s / a.len() as f64).collect())
}

pub fn decode(chip: &mut ChipModel, key: &HidingKey, config: &DecodeConfig) -> Result<DecodeResult> {
    decode_with(chip, key, config, &Identity)
}

pub fn decode_with(chip: &mut ChipModel, key: &HidingKey, config: &DecodeConfig, perm: &dyn AddressPermutation) -> Result<DecodeResult> {
    let plan = plan_addresses_with(key, chip.geometry(), perm)?;
    let op = config.signal;
    let reference = match &config.method {
        DecodeMethod::Reference(addrs) => {
            if addrs.is_empty() {
                return Err(Error::config("reference decode needs reference addresses"));
            }
            let trace = chip.measure_trace(addrs)?;
            Some(trace.times(op).sum::<f64>() / addrs.len() as f64)
        }
        _ => None,
    };
    let means = measure_bit_means(chip, &plan, op)?;
    classify(chip, key, &config.method, op, means, reference)
}

fn classify(
    chip: &ChipModel,
    key: &HidingKey,
    method: &DecodeMethod,
    op: Op,
    means: Vec<f64>,
    reference: Option<f64>,
) -> Result<DecodeResult> {
    let by_threshold = |t: f64| -> Vec<bool> { means.iter().map(|&m| m > t).collect() };
    let (labels, threshold, ambiguous) = match method {
        DecodeMethod::Threshold(t) => (by_threshold(*t), ThresholdUsed::Value { threshold: *t }, false),
        DecodeMethod::Reference(_) => {
            let r = reference.expect("reference measured");
            let profile = chip.profile();
            let curve = profile.curve(op);
            let usage = curve.stress_at(r / profile.temperature_factor(chip.temperature()));
            let ratio = curve.mean_time(usage + key.stress_count as f64) / curve.mean_time(usage);
            let t = 0.5 * (r + r * ratio);
            (by_threshold(t), ThresholdUsed::Reference { reference_mean: r, estimated_usage: usage, threshold: t }, false)
        }
        DecodeMethod::KMeans2 => match kmeans2(&means) {
            Ok(k) => {
                let ambiguous = k.separation() < AMBIGUITY_SEPARATION;
                if ambiguous {
                    log::debug!("clusters only {:.2} pooled sd apart; decode is ambiguous", k.separation());
                }
                (k.labels.clone(), ThresholdUsed::Centroids { low: k.low, high: k.high }, ambiguous)
            }
            Err(Error::SingleCluster) => {
                log::warn!("all bit means identical; decode is ambiguous");
                let m = means[0];
                (vec![false; means.len()], ThresholdUsed::Centroids { low: m, high: m }, true)
            }
            Err(e) => return Err(e),
        },
    };
    let t = threshold.threshold();
    let confidence = means.iter().map(|m| (m - t).abs()).fold(f64::INFINITY, f64::min);
    Ok(DecodeResult { bits: Payload::from_bits(labels)?, means, threshold, confidence, ambiguous })
}
