//! Wear-timing simulator for byte-addressable ReRAM and a covert codec that
//! hides bit-strings in the switching latency of deliberately stressed cells.

pub mod calibration;
pub mod codec;
pub mod device;
pub mod error;
pub mod harness;
mod noise;

pub use calibration::{CalibrationProfile, Op};
pub use codec::{decode, encode, generate_key, DecodeConfig, DecodeMethod, HidingKey, Payload};
pub use device::{Address, ChipGeometry, ChipModel, TimingTrace};
pub use error::{Error, Result};
