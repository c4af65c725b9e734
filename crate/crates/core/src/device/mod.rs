//! Simulated byte-addressable ReRAM chip.
//!
//! Each address holds one byte. Every bit keeps its own count of completed
//! set-reset pairs; the byte latency reported by a write is drawn from the
//! calibration profile at the stress of the most worn bit that toggles.

mod state;

pub use state::{load_state, save_state, STATE_MAGIC};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationProfile, Op};
use crate::error::{Error, Result};
use crate::noise;

pub type Address = u64;

pub const WORD_LENGTH: u8 = 8;
pub const DEFAULT_ADDRESS_COUNT: u64 = 1 << 20;
pub const DEFAULT_BUFFER_SIZE: u64 = 256;
pub const ERASED: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipGeometry {
    pub address_count: u64,
    pub word_length: u8,
    pub buffer_size: u64,
}

impl Default for ChipGeometry {
    fn default() -> Self {
        Self { address_count: DEFAULT_ADDRESS_COUNT, word_length: WORD_LENGTH, buffer_size: DEFAULT_BUFFER_SIZE }
    }
}

impl ChipGeometry {
    pub fn with_addresses(address_count: u64) -> Self {
        Self { address_count, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.address_count == 0 {
            return Err(Error::config("chip must have at least one address"));
        }
        if self.address_count > u32::MAX as u64 {
            return Err(Error::config("address space limited to 32 bits"));
        }
        if self.word_length != WORD_LENGTH {
            return Err(Error::config(format!("word length must be {WORD_LENGTH} bits")));
        }
        if self.buffer_size == 0 {
            return Err(Error::config("write buffer must hold at least one address"));
        }
        Ok(())
    }

    pub fn check(&self, address: Address) -> Result<()> {
        if address >= self.address_count {
            return Err(Error::OutOfBounds { address, limit: self.address_count });
        }
        Ok(())
    }

    pub fn check_range(&self, base: Address, len: u64) -> Result<()> {
        match base.checked_add(len) {
            Some(end) if end <= self.address_count => Ok(()),
            _ => Err(Error::OutOfBounds { address: base.saturating_add(len).saturating_sub(1), limit: self.address_count }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellState {
    /// Completed set-reset pairs per bit, LSB first.
    pub bit_stress: [u32; 8],
    pub value: u8,
}

impl Default for CellState {
    fn default() -> Self {
        Self { bit_stress: [0; 8], value: ERASED }
    }
}

impl CellState {
    /// Stress of the most worn bit.
    pub fn stress_count(&self) -> u32 {
        self.bit_stress.iter().copied().max().unwrap_or(0)
    }

    fn uniform(&self) -> bool {
        self.bit_stress.iter().all(|&s| s == self.bit_stress[0])
    }

    fn max_stress(&self, mask: u8) -> u32 {
        (0..8).filter(|b| mask >> b & 1 == 1).map(|b| self.bit_stress[b]).max().unwrap_or(0)
    }

    fn event_key(&self, next: u8) -> u64 {
        let mut k = (self.value as u64) << 8 | next as u64;
        for s in self.bit_stress {
            k = noise::key(k, 0, s as u64, 0);
        }
        k
    }

    /// Applies the write and returns the (set mask, reset mask).
    fn commit(&mut self, next: u8) -> (u8, u8) {
        let set_mask = self.value & !next;
        let reset_mask = !self.value & next;
        for b in 0..8 {
            if reset_mask >> b & 1 == 1 {
                self.bit_stress[b] = self.bit_stress[b].saturating_add(1);
            }
        }
        self.value = next;
        (set_mask, reset_mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WriteKind {
    NoOp,
    Set,
    Reset,
    Mixed,
}

/// Latency reported by one byte write.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriteTiming {
    pub kind: WriteKind,
    pub latency: f64,
}

impl WriteTiming {
    pub fn set_time(&self) -> Option<f64> {
        (self.kind == WriteKind::Set).then_some(self.latency)
    }

    pub fn reset_time(&self) -> Option<f64> {
        (self.kind == WriteKind::Reset).then_some(self.latency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub address: Address,
    pub set_time: f64,
    pub reset_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingTrace {
    pub entries: Vec<TraceEntry>,
}

impl TimingTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn times(&self, op: Op) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(move |e| match op {
            Op::Set => e.set_time,
            Op::Reset => e.reset_time,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BakeRecord {
    pub celsius: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ChipModel {
    geometry: ChipGeometry,
    cells: Vec<CellState>,
    profile: Arc<CalibrationProfile>,
    seed: u64,
    chip_factor: f64,
    temperature: f64,
    clock: f64,
    random_delay: bool,
    calendar: f64,
    aging: f64,
    thermal_history: Vec<BakeRecord>,
}

impl PartialEq for ChipModel {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry
            && self.seed == other.seed
            && self.temperature.to_bits() == other.temperature.to_bits()
            && self.clock.to_bits() == other.clock.to_bits()
            && self.random_delay == other.random_delay
            && self.calendar.to_bits() == other.calendar.to_bits()
            && self.aging.to_bits() == other.aging.to_bits()
            && self.thermal_history == other.thermal_history
            && *self.profile == *other.profile
            && self.cells == other.cells
    }
}

/// Per-chip multiplicative factor, lognormal with unit mean.
pub(crate) fn chip_factor(seed: u64, variation: f64) -> f64 {
    let z = noise::normal(seed, noise::DOMAIN_CHIP, 0, 0);
    (variation * z - variation * variation / 2.0).exp()
}

impl ChipModel {
    pub fn new(geometry: ChipGeometry, profile: impl Into<Arc<CalibrationProfile>>, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let profile = profile.into();
        profile.validate()?;
        Ok(Self {
            cells: vec![CellState::default(); geometry.address_count as usize],
            chip_factor: chip_factor(seed, profile.chip_variation),
            geometry,
            profile,
            seed,
            temperature: 25.0,
            clock: 0.0,
            random_delay: false,
            calendar: 0.0,
            aging: 1.0,
            thermal_history: Vec::new(),
        })
    }

    pub fn geometry(&self) -> &ChipGeometry {
        &self.geometry
    }

    pub fn profile(&self) -> &CalibrationProfile {
        &self.profile
    }

    pub fn shared_profile(&self) -> Arc<CalibrationProfile> {
        Arc::clone(&self.profile)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The chip's process-variation factor applied to every mean latency.
    pub fn chip_factor(&self) -> f64 {
        self.chip_factor
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Simulated device time in seconds; never wall time.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Simulated storage time elapsed outside of operations, in seconds.
    pub fn calendar(&self) -> f64 {
        self.calendar
    }

    pub fn aging_factor(&self) -> f64 {
        self.aging
    }

    pub fn thermal_history(&self) -> &[BakeRecord] {
        &self.thermal_history
    }

    pub fn random_delay_enabled(&self) -> bool {
        self.random_delay
    }

    pub fn set_random_delay(&mut self, enabled: bool) {
        self.random_delay = enabled;
    }

    pub fn set_temperature(&mut self, celsius: f64) -> Result<()> {
        let p = &self.profile;
        if !(p.min_temperature..=p.max_temperature).contains(&celsius) {
            return Err(Error::config(format!(
                "temperature {celsius} °C outside rated range {}..={} °C",
                p.min_temperature, p.max_temperature
            )));
        }
        self.temperature = celsius;
        Ok(())
    }

    pub fn cell(&self, address: Address) -> Result<&CellState> {
        self.geometry.check(address)?;
        Ok(&self.cells[address as usize])
    }

    pub fn stress_count(&self, address: Address) -> Result<u32> {
        Ok(self.cell(address)?.stress_count())
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    /// Deterministic mean latency of `op` at `stress` on this chip under its
    /// current temperature and aging state.
    pub fn expected_time(&self, op: Op, stress: f64) -> f64 {
        self.profile.mean_time(op, stress) * self.condition_factor()
    }

    fn condition_factor(&self) -> f64 {
        self.chip_factor * self.profile.temperature_factor(self.temperature) * self.aging
    }

    fn draw(&self, address: Address, op: Op, stress: u32, event: u64) -> f64 {
        let p = &*self.profile;
        let s = stress as f64;
        let mean = p.mean_time(op, s) * self.condition_factor();
        let sc = p.cell_sigma(op, s);
        let sm = p.sigma(op);
        let stream = address << 1 | op.index();
        let zc = if sc > 0.0 { noise::normal(self.seed, noise::DOMAIN_CELL, stream, 0) } else { 0.0 };
        let zm = if sm > 0.0 { noise::normal(self.seed, noise::DOMAIN_MEASURE, stream, event) } else { 0.0 };
        mean * (sc * zc - sc * sc / 2.0).exp() * (sm * zm - sm * sm / 2.0).exp()
    }

    fn worn(&self, cell: &CellState) -> bool {
        cell.stress_count() as u64 > self.profile.endurance_max
    }

    /// Single-byte write with a measured latency.
    pub fn timed_write(&mut self, address: Address, value: u8) -> Result<WriteTiming> {
        self.geometry.check(address)?;
        let cell = self.cells[address as usize];
        if self.worn(&cell) {
            return Err(Error::WornOut { address });
        }
        let set_mask = cell.value & !value;
        let reset_mask = !cell.value & value;
        let event = cell.event_key(value);
        let set = (set_mask != 0).then(|| self.draw(address, Op::Set, cell.max_stress(set_mask), event));
        let reset = (reset_mask != 0).then(|| self.draw(address, Op::Reset, cell.max_stress(reset_mask), event));
        let (kind, mut latency) = match (set, reset) {
            (None, None) => (WriteKind::NoOp, self.profile.noop_time),
            (Some(t), None) => (WriteKind::Set, t),
            (None, Some(t)) => (WriteKind::Reset, t),
            (Some(a), Some(b)) => (WriteKind::Mixed, a.max(b)),
        };
        if self.random_delay {
            latency += self.profile.jitter_max * noise::uniform(self.seed, noise::DOMAIN_JITTER, address, event);
        }
        self.cells[address as usize].commit(value);
        self.clock += latency;
        Ok(WriteTiming { kind, latency })
    }

    /// Plain read. Bits of cells past their endurance limit read back at random.
    pub fn read(&self, address: Address) -> Result<u8> {
        let cell = self.cell(address)?;
        let mut v = cell.value;
        for b in 0..8 {
            if cell.bit_stress[b] as u64 > self.profile.endurance_max {
                let u = noise::uniform(self.seed, noise::DOMAIN_READ, address << 3 | b as u64, self.clock.to_bits());
                if u < 0.5 {
                    v ^= 1 << b;
                }
            }
        }
        Ok(v)
    }

    /// One write-buffer command over consecutive addresses starting at `base`.
    pub fn buffered_write(&mut self, base: Address, values: &[u8]) -> Result<f64> {
        let len = values.len() as u64;
        if len == 0 || len > self.geometry.buffer_size {
            return Err(Error::config(format!("buffered write takes 1..={} bytes", self.geometry.buffer_size)));
        }
        self.geometry.check_range(base, len)?;
        for a in base..base + len {
            if self.worn(&self.cells[a as usize]) {
                return Err(Error::WornOut { address: a });
            }
        }
        for (i, &v) in values.iter().enumerate() {
            self.cells[base as usize + i].commit(v);
        }
        let t = self.profile.buffered_command_time;
        self.clock += t;
        Ok(t)
    }

    /// Set then reset every address in order, recording both latencies.
    pub fn measure_trace(&mut self, addresses: &[Address]) -> Result<TimingTrace> {
        for &a in addresses {
            self.geometry.check(a)?;
        }
        let mut entries = Vec::with_capacity(addresses.len());
        for &address in addresses {
            let set_time = self.timed_write(address, 0x00)?.latency;
            let reset_time = self.timed_write(address, 0xFF)?.latency;
            entries.push(TraceEntry { address, set_time, reset_time });
        }
        Ok(TimingTrace { entries })
    }

    /// Number of buffer commands needed to cover `addresses` with greedy
    /// buffer-sized windows.
    pub fn buffer_windows(&self, addresses: &[Address]) -> u64 {
        let mut sorted = addresses.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut windows = 0;
        let mut end = 0;
        for a in sorted {
            if windows == 0 || a >= end {
                windows += 1;
                end = a + self.geometry.buffer_size;
            }
        }
        windows
    }

    /// Addresses whose most worn bit would pass the endurance limit after
    /// `pairs` more set-reset pairs.
    pub fn would_wear_out(&self, addresses: &[Address], pairs: u64) -> Result<Vec<Address>> {
        let mut out = Vec::new();
        for &a in addresses {
            if self.cell(a)?.stress_count() as u64 + pairs > self.profile.endurance_max {
                out.push(a);
            }
        }
        Ok(out)
    }

    /// Bulk equivalent of `pairs` rounds of all-zero then all-one buffered
    /// writes over `addresses`: every bit gains `pairs`, values end erased.
    pub fn stress_pairs(&mut self, addresses: &[Address], pairs: u64) -> Result<f64> {
        if let Some(&address) = self.would_wear_out(addresses, pairs)?.first() {
            return Err(Error::WornOut { address });
        }
        if pairs == 0 {
            return Ok(0.0);
        }
        let add = pairs as u32;
        for &a in addresses {
            let cell = &mut self.cells[a as usize];
            for s in &mut cell.bit_stress {
                *s += add;
            }
            cell.value = ERASED;
        }
        let t = pairs as f64 * self.profile.pair_time * self.buffer_windows(addresses) as f64;
        self.clock += t;
        Ok(t)
    }

    /// Bulk buffered write of one value to every address.
    pub fn program(&mut self, addresses: &[Address], value: u8) -> Result<f64> {
        for &a in addresses {
            let cell = self.cell(a)?;
            if self.worn(cell) {
                return Err(Error::WornOut { address: a });
            }
        }
        for &a in addresses {
            self.cells[a as usize].commit(value);
        }
        let t = self.profile.buffered_command_time * self.buffer_windows(addresses) as f64;
        self.clock += t;
        Ok(t)
    }

    /// Adds per-bit wear without changing stored values or the clock.
    pub(crate) fn add_bit_stress(&mut self, address: Address, extra: [u32; 8]) {
        let cell = &mut self.cells[address as usize];
        for (s, e) in cell.bit_stress.iter_mut().zip(extra) {
            *s = s.saturating_add(e);
        }
    }

    pub(crate) fn advance_clock(&mut self, seconds: f64) {
        self.clock += seconds;
    }

    /// Unpowered storage: only the calendar moves.
    pub(crate) fn age(&mut self, seconds: f64, acceleration: f64) {
        self.calendar += seconds;
        let days = seconds * acceleration / 86_400.0;
        self.aging *= 1.0 + self.profile.retention_drift_per_day * days;
    }

    pub(crate) fn record_bake(&mut self, record: BakeRecord) {
        self.thermal_history.push(record);
    }
}
