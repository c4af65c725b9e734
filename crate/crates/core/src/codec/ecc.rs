//! Repetition coding with majority-vote recovery.

use serde::{Deserialize, Serialize};

use super::Payload;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EccScheme {
    None,
    Repetition(usize),
}

impl EccScheme {
    fn factor(self) -> Result<usize> {
        match self {
            EccScheme::None => Ok(1),
            EccScheme::Repetition(k) if k % 2 == 1 => Ok(k),
            EccScheme::Repetition(k) => Err(Error::config(format!("repetition factor must be odd, got {k}"))),
        }
    }
}

/// Concatenates `k` copies of the payload.
pub fn apply_ecc(payload: &Payload, scheme: EccScheme) -> Result<Payload> {
    let k = scheme.factor()?;
    Ok(Payload::from_bits(payload.bits().repeat(k)).expect("non-empty"))
}

/// Majority vote across the `k` concatenated copies.
pub fn strip_ecc(coded: &Payload, scheme: EccScheme) -> Result<Payload> {
    let k = scheme.factor()?;
    if coded.len() % k != 0 {
        return Err(Error::config(format!("coded length {} is not a multiple of {k}", coded.len())));
    }
    let n = coded.len() / k;
    let bits = coded.bits();
    let out = (0..n).map(|i| (0..k).filter(|c| bits[c * n + i]).count() * 2 > k).collect();
    Payload::from_bits(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_flip_per_position_is_corrected() {
        let p = Payload::from_hex("0xECE3038B").unwrap();
        let mut coded = apply_ecc(&p, EccScheme::Repetition(3)).unwrap().bits().to_vec();
        assert_eq!(coded.len(), 96);
        for i in 0..32 {
            coded[(i % 3) * 32 + i] ^= true;
        }
        let coded = Payload::from_bits(coded).unwrap();
        assert_eq!(strip_ecc(&coded, EccScheme::Repetition(3)).unwrap(), p);
    }

    #[test]
    fn k1_and_none_are_identity() {
        let p = Payload::from_hex("0xA5").unwrap();
        for s in [EccScheme::None, EccScheme::Repetition(1)] {
            assert_eq!(apply_ecc(&p, s).unwrap(), p);
            assert_eq!(strip_ecc(&p, s).unwrap(), p);
        }
    }

    #[test]
    fn even_factor_rejected() {
        let p = Payload::from_hex("0xA5").unwrap();
        assert!(matches!(apply_ecc(&p, EccScheme::Repetition(2)), Err(Error::Config(_))));
        assert!(matches!(strip_ecc(&p, EccScheme::Repetition(4)), Err(Error::Config(_))));
    }
}
