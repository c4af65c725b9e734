//! Binary chip-state files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        "RRSIM\x01"
//! geometry     address_count u64, word_length u8, buffer_size u64
//! seed u64, clock f64, temperature f64
//! calendar f64, aging f64, random_delay u8
//! bakes        count u32, then (celsius f64, seconds f64) each
//! cells        address_count x (stress_count u32, value u8)
//! bit detail   count u32, then (address u32, 8 x u32 bit stress) for every
//!              cell whose bits are not uniformly worn
//! ```

use std::sync::Arc;

use super::{chip_factor, BakeRecord, CellState, ChipGeometry, ChipModel};
use crate::calibration::CalibrationProfile;
use crate::error::{Error, Result};

pub const STATE_MAGIC: &[u8; 6] = b"RRSIM\x01";

pub fn save_state(chip: &ChipModel) -> Vec<u8> {
    let n = chip.cells.len();
    let mut out = Vec::with_capacity(64 + n * 5);
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&chip.geometry.address_count.to_le_bytes());
    out.push(chip.geometry.word_length);
    out.extend_from_slice(&chip.geometry.buffer_size.to_le_bytes());
    out.extend_from_slice(&chip.seed.to_le_bytes());
    out.extend_from_slice(&chip.clock.to_le_bytes());
    out.extend_from_slice(&chip.temperature.to_le_bytes());
    out.extend_from_slice(&chip.calendar.to_le_bytes());
    out.extend_from_slice(&chip.aging.to_le_bytes());
    out.push(chip.random_delay as u8);
    out.extend_from_slice(&(chip.thermal_history.len() as u32).to_le_bytes());
    for b in &chip.thermal_history {
        out.extend_from_slice(&b.celsius.to_le_bytes());
        out.extend_from_slice(&b.seconds.to_le_bytes());
    }
    for c in &chip.cells {
        out.extend_from_slice(&c.stress_count().to_le_bytes());
        out.push(c.value);
    }
    let mixed: Vec<usize> = (0..n).filter(|&i| !chip.cells[i].uniform()).collect();
    out.extend_from_slice(&(mixed.len() as u32).to_le_bytes());
    for i in mixed {
        out.extend_from_slice(&(i as u32).to_le_bytes());
        for s in chip.cells[i].bit_stress {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format("chip state truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Rebuilds a chip from [`save_state`] output. The profile is not part of the
/// file and must be supplied.
pub fn load_state(bytes: &[u8], profile: impl Into<Arc<CalibrationProfile>>) -> Result<ChipModel> {
    let mut r = Reader { buf: bytes };
    let magic = r.take(STATE_MAGIC.len()).map_err(|_| Error::format("not a chip state file"))?;
    if &magic[..5] != &STATE_MAGIC[..5] {
        return Err(Error::format("bad magic; not a chip state file"));
    }
    if magic[5] != STATE_MAGIC[5] {
        return Err(Error::format(format!("unsupported chip state version {}", magic[5])));
    }
    let geometry = ChipGeometry { address_count: r.u64()?, word_length: r.u8()?, buffer_size: r.u64()? };
    geometry.validate().map_err(|e| Error::format(format!("invalid geometry: {e}")))?;
    let seed = r.u64()?;
    let clock = r.f64()?;
    let temperature = r.f64()?;
    let calendar = r.f64()?;
    let aging = r.f64()?;
    let random_delay = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::format(format!("bad random-delay flag {v}"))),
    };
    let bakes = r.u32()? as usize;
    let mut thermal_history = Vec::with_capacity(bakes.min(1 << 16));
    for _ in 0..bakes {
        thermal_history.push(BakeRecord { celsius: r.f64()?, seconds: r.f64()? });
    }
    let n = geometry.address_count as usize;
    let packed = r.take(n.checked_mul(5).ok_or_else(|| Error::format("cell table too large"))?)?;
    let mut cells: Vec<CellState> = packed
        .chunks_exact(5)
        .map(|c| CellState {
            bit_stress: [u32::from_le_bytes(c[..4].try_into().unwrap()); 8],
            value: c[4],
        })
        .collect();
    let mixed = r.u32()?;
    for _ in 0..mixed {
        let address = r.u32()? as usize;
        if address >= n {
            return Err(Error::format(format!("bit-detail address {address} out of range")));
        }
        let mut bits = [0u32; 8];
        for b in &mut bits {
            *b = r.u32()?;
        }
        let cell = &mut cells[address];
        if bits.iter().copied().max() != Some(cell.stress_count()) {
            return Err(Error::format(format!("bit detail for {address} disagrees with its stress count")));
        }
        cell.bit_stress = bits;
    }
    if !r.buf.is_empty() {
        return Err(Error::format("trailing bytes after chip state"));
    }
    let profile = profile.into();
    profile.validate()?;
    if !(clock >= 0.0 && calendar >= 0.0 && aging > 0.0) {
        return Err(Error::format("negative clock or non-positive aging factor"));
    }
    Ok(ChipModel {
        chip_factor: chip_factor(seed, profile.chip_variation),
        geometry,
        cells,
        profile,
        seed,
        temperature,
        clock,
        random_delay,
        calendar,
        aging,
        thermal_history,
    })
}
