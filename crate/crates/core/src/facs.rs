//! FACS action-unit codings and the Prkachin–Solomon pain intensity (PSPI).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest attainable PSPI value: 5 + 5 + 5 + 1.
pub const PSPI_MAX: u8 = 16;

/// Action units that must be present in every coding.
pub const REQUIRED_AUS: [&str; 6] = ["au4", "au6", "au7", "au9", "au10", "au43"];

/// Extra pain-related AUs that are carried along but never scored.
pub const METADATA_AUS: [&str; 5] = ["au12", "au20", "au25", "au26", "au27"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FacsError {
    #[error("missing required action unit {0}")]
    MissingAu(String),
    #[error("action unit {au} has out-of-range intensity {value}")]
    OutOfRange { au: String, value: f64 },
    #[error("unparseable intensity {value:?} for {au}")]
    BadIntensity { au: String, value: String },
}

/// Per-frame FACS intensities for the PSPI action units.
///
/// Graded AUs use 0..=5 (letters A..E map to 1..5, absent is 0); AU43 is binary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuCoding {
    pub au4: u8,
    pub au6: u8,
    pub au7: u8,
    pub au9: u8,
    pub au10: u8,
    pub au43: u8,
    /// Non-PSPI action units, passed through untouched.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, u8>,
}

/// PSPI score in `0..=16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PainScore(u8);

impl PainScore {
    pub fn new(value: u8) -> Option<Self> {
        (value <= PSPI_MAX).then_some(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for PainScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Normalizes an AU name: `AU4`, `au04`, `Au4` all become `au4`.
pub fn normalize_au_name(name: &str) -> Option<String> {
    let lower = name.trim().to_ascii_lowercase();
    let digits = lower.strip_prefix("au")?;
    let n: u32 = digits.parse().ok()?;
    Some(format!("au{n}"))
}

/// Parses a FACS intensity token: a number `0..5` or a letter `A..E`.
pub fn parse_intensity(token: &str) -> Option<f64> {
    let t = token.trim();
    if t.len() == 1 {
        let c = t.as_bytes()[0].to_ascii_uppercase();
        if (b'A'..=b'E').contains(&c) {
            return Some(f64::from(c - b'A' + 1));
        }
    }
    t.parse::<f64>().ok()
}

fn graded(au: &str, value: f64, max: u8) -> Result<u8, FacsError> {
    if value.fract() != 0.0 || !(0.0..=f64::from(max)).contains(&value) {
        return Err(FacsError::OutOfRange {
            au: au.to_string(),
            value,
        });
    }
    Ok(value as u8)
}

/// Validates a raw AU-name → intensity map into an [`AuCoding`].
///
/// Names are normalized with [`normalize_au_name`]; unknown extra AUs are kept
/// as metadata provided their intensity is a valid 0..=5 grade.
pub fn validate_au_coding(raw: &BTreeMap<String, f64>) -> Result<AuCoding, FacsError> {
    let mut normalized = BTreeMap::new();
    for (name, &value) in raw {
        let key = normalize_au_name(name).unwrap_or_else(|| name.to_ascii_lowercase());
        normalized.insert(key, value);
    }
    let get = |au: &str| -> Result<f64, FacsError> {
        normalized
            .get(au)
            .copied()
            .ok_or_else(|| FacsError::MissingAu(au.to_string()))
    };
    let mut coding = AuCoding {
        au4: graded("au4", get("au4")?, 5)?,
        au6: graded("au6", get("au6")?, 5)?,
        au7: graded("au7", get("au7")?, 5)?,
        au9: graded("au9", get("au9")?, 5)?,
        au10: graded("au10", get("au10")?, 5)?,
        au43: graded("au43", get("au43")?, 1)?,
        extra: BTreeMap::new(),
    };
    for (name, &value) in &normalized {
        if !REQUIRED_AUS.contains(&name.as_str()) {
            coding.extra.insert(name.clone(), graded(name, value, 5)?);
        }
    }
    Ok(coding)
}

/// `AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43`.
pub fn compute_pspi(coding: &AuCoding) -> PainScore {
    PainScore(coding.au4 + coding.au6.max(coding.au7) + coding.au9.max(coding.au10) + coding.au43)
}

impl AuCoding {
    pub fn pspi(&self) -> PainScore {
        compute_pspi(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn all_zero_coding_is_valid() {
        let c = validate_au_coding(&raw(&[
            ("au4", 0.0),
            ("au6", 0.0),
            ("au7", 0.0),
            ("au9", 0.0),
            ("au10", 0.0),
            ("au43", 0.0),
        ]))
        .unwrap();
        assert_eq!(c, AuCoding::default());
        assert_eq!(compute_pspi(&c).value(), 0);
    }

    #[test]
    fn out_of_range_rejected() {
        let err = validate_au_coding(&raw(&[
            ("au4", 6.0),
            ("au6", 0.0),
            ("au7", 0.0),
            ("au9", 0.0),
            ("au10", 0.0),
            ("au43", 0.0),
        ]))
        .unwrap_err();
        assert!(matches!(err, FacsError::OutOfRange { ref au, .. } if au == "au4"));

        let err = validate_au_coding(&raw(&[
            ("au4", 0.0),
            ("au6", 0.0),
            ("au7", 0.0),
            ("au9", 0.0),
            ("au10", 0.0),
            ("au43", 2.0),
        ]))
        .unwrap_err();
        assert!(matches!(err, FacsError::OutOfRange { ref au, .. } if au == "au43"));
    }

    #[test]
    fn missing_au_rejected() {
        let err = validate_au_coding(&raw(&[("au4", 1.0), ("au6", 0.0)])).unwrap_err();
        assert_eq!(err, FacsError::MissingAu("au7".into()));
    }

    #[test]
    fn direct_validation_keeps_values_and_metadata() {
        let c = validate_au_coding(&raw(&[
            ("AU4", 3.0),
            ("au6", 1.0),
            ("au7", 0.0),
            ("au9", 0.0),
            ("au10", 2.0),
            ("au43", 1.0),
            ("au25", 4.0),
        ]))
        .unwrap();
        assert_eq!((c.au4, c.au6, c.au7, c.au9, c.au10, c.au43), (3, 1, 0, 0, 2, 1));
        assert_eq!(c.extra.get("au25"), Some(&4));
    }

    #[test]
    fn pspi_examples() {
        let max = AuCoding {
            au4: 5,
            au6: 5,
            au7: 5,
            au9: 5,
            au10: 5,
            au43: 1,
            ..Default::default()
        };
        assert_eq!(compute_pspi(&max).value(), PSPI_MAX);

        let c = AuCoding {
            au4: 4,
            au6: 3,
            au7: 5,
            au9: 0,
            au10: 2,
            au43: 1,
            ..Default::default()
        };
        assert_eq!(compute_pspi(&c).value(), 12);
    }

    #[test]
    fn letters_and_names() {
        assert_eq!(parse_intensity("C"), Some(3.0));
        assert_eq!(parse_intensity("e"), Some(5.0));
        assert_eq!(parse_intensity("2"), Some(2.0));
        assert_eq!(normalize_au_name("AU04").as_deref(), Some("au4"));
        assert_eq!(normalize_au_name("nose"), None);
    }
}
