//! Wear curves, noise parameters and the procedures that produce them.

mod characterize;
mod separation;

pub use characterize::{
    characterize, fit_profile, fit_profile_onto, read_records_csv, synthesize_records, write_records_csv, CharacterizationRecord,
    CharacterizationRun, Envelope, GROUP_SIZE,
};
pub use separation::{min_stress_for_separation, min_stress_for_separation_with_seed, SEPARATION_GRID_STEP};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

const DEFAULT_PROFILE_JSON: &str = include_str!("../../profiles/default_mb85as8mt.profile.json");

/// Stress level at which spread gains are quoted.
pub const SPREAD_REFERENCE_STRESS: f64 = 1.0e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Set,
    Reset,
}

impl Op {
    pub(crate) fn index(self) -> u64 {
        match self {
            Op::Set => 0,
            Op::Reset => 1,
        }
    }
}

impl std::fmt::Display for Op {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Op::Set => "set",
            Op::Reset => "reset",
        })
    }
}

impl std::str::FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set" => Ok(Op::Set),
            "reset" => Ok(Op::Reset),
            other => Err(Error::config(format!("unknown operation `{other}` (expected set or reset)"))),
        }
    }
}

/// Mean latency `t0 + a * s^p` for a cell that has completed `s` set-reset pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WearCurve {
    pub t0: f64,
    pub a: f64,
    pub p: f64,
}

impl WearCurve {
    pub fn mean_time(&self, stress: f64) -> f64 {
        self.t0 + self.a * stress.max(0.0).powf(self.p)
    }

    /// Inverse of [`mean_time`](Self::mean_time); clamps to zero below `t0`.
    pub fn stress_at(&self, time: f64) -> f64 {
        if time <= self.t0 || self.a <= 0.0 {
            return 0.0;
        }
        ((time - self.t0) / self.a).powf(1.0 / self.p)
    }
}

/// Wear-dependent cell-to-cell spread: the lognormal sigma of a cell's persistent
/// offset grows as `gain * (s / 1e5)^exponent`, capped by the profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadCurve {
    pub gain: f64,
    pub exponent: f64,
}

impl SpreadCurve {
    pub fn sigma(&self, stress: f64, cap: f64) -> f64 {
        if stress <= 0.0 || self.gain == 0.0 {
            return 0.0;
        }
        (self.gain * (stress / SPREAD_REFERENCE_STRESS).powf(self.exponent)).min(cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub schema_version: u32,
    pub name: String,
    pub set_curve: WearCurve,
    pub reset_curve: WearCurve,
    /// Per-measurement lognormal sigma.
    pub set_sigma: f64,
    pub reset_sigma: f64,
    pub set_spread: SpreadCurve,
    pub reset_spread: SpreadCurve,
    pub spread_cap: f64,
    /// Latency of one 256-address all-set or all-reset command.
    pub buffered_command_time: f64,
    pub pair_time: f64,
    pub noop_time: f64,
    /// Fractional change of mean latency per degree away from 25 °C.
    pub temp_coeff: f64,
    pub min_temperature: f64,
    pub max_temperature: f64,
    pub jitter_max: f64,
    pub endurance_rated: u64,
    pub endurance_max: u64,
    pub chip_variation: f64,
    /// Fractional drift of mean latency per day of unpowered storage at 25 °C.
    #[serde(default)]
    pub retention_drift_per_day: f64,
    /// Retention acceleration per 10 °C above 25 °C during a bake.
    #[serde(default = "default_thermal_acceleration")]
    pub thermal_acceleration: f64,
}

fn default_thermal_acceleration() -> f64 {
    2.0
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self::from_json(DEFAULT_PROFILE_JSON).expect("bundled profile is valid")
    }
}

impl CalibrationProfile {
    pub fn curve(&self, op: Op) -> &WearCurve {
        match op {
            Op::Set => &self.set_curve,
            Op::Reset => &self.reset_curve,
        }
    }

    pub fn sigma(&self, op: Op) -> f64 {
        match op {
            Op::Set => self.set_sigma,
            Op::Reset => self.reset_sigma,
        }
    }

    pub fn spread(&self, op: Op) -> &SpreadCurve {
        match op {
            Op::Set => &self.set_spread,
            Op::Reset => &self.reset_spread,
        }
    }

    pub fn mean_time(&self, op: Op, stress: f64) -> f64 {
        self.curve(op).mean_time(stress)
    }

    pub fn cell_sigma(&self, op: Op, stress: f64) -> f64 {
        self.spread(op).sigma(stress, self.spread_cap)
    }

    pub fn temperature_factor(&self, celsius: f64) -> f64 {
        1.0 + self.temp_coeff * (celsius - 25.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("profile `{}`: {msg}", self.name)));
        if self.schema_version != PROFILE_SCHEMA_VERSION {
            return Err(Error::format(format!(
                "profile schema version {} not supported (expected {PROFILE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (label, c) in [("set", &self.set_curve), ("reset", &self.reset_curve)] {
            if !(c.t0 > 0.0 && c.t0.is_finite()) {
                return bad(&format!("{label} t0 must be positive"));
            }
            if !(c.a > 0.0 && c.a.is_finite()) {
                return bad(&format!("{label} curve must increase with stress (a > 0)"));
            }
            if !(c.p >= 1.0 && c.p.is_finite()) {
                return bad(&format!("{label} exponent must be at least 1"));
            }
        }
        let sigmas = [self.set_sigma, self.reset_sigma, self.spread_cap, self.chip_variation];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("sigmas must be finite and non-negative");
        }
        if self.reset_sigma < self.set_sigma {
            return bad("reset sigma must not be below set sigma");
        }
        for s in [&self.set_spread, &self.reset_spread] {
            if !(s.gain >= 0.0 && s.exponent >= 0.0) {
                return bad("spread gain and exponent must be non-negative");
            }
        }
        let times = [self.buffered_command_time, self.pair_time, self.noop_time];
        if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("command times must be positive");
        }
        if !(self.jitter_max >= 0.0) {
            return bad("jitter_max must be non-negative");
        }
        if self.endurance_rated == 0 || self.endurance_max < self.endurance_rated {
            return bad("endurance_max must be at least endurance_rated > 0");
        }
        if self.min_temperature >= self.max_temperature {
            return bad("empty temperature range");
        }
        if self.temperature_factor(self.min_temperature) <= 0.0 || self.temperature_factor(self.max_temperature) <= 0.0 {
            return bad("temperature coefficient drives latency non-positive inside the rated range");
        }
        if !(self.thermal_acceleration >= 1.0) {
            return bad("thermal_acceleration must be at least 1");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// The same profile with every noise source switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            set_sigma: 0.0,
            reset_sigma: 0.0,
            set_spread: SpreadCurve { gain: 0.0, ..self.set_spread },
            reset_spread: SpreadCurve { gain: 0.0, ..self.reset_spread },
            chip_variation: 0.0,
            jitter_max: 0.0,
            ..self.clone()
        }
    }
}
