//! Dimensioned quantities as they appear in config files and on the command line.
//!
//! Internally everything is stored in seconds, hertz and microwatts. Text input
//! must carry an explicit unit suffix (`"5 us"`, `"89.5 kHz"`, `"0.895 kHz/uW"`);
//! bare numbers are rejected for dimensioned fields.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Time,
    Frequency,
    Power,
    /// Rate per unit power, canonical Hz/µW.
    RatePerPower,
    /// Rate per unit power squared, canonical Hz/µW².
    RatePerPowerSquared,
}

impl Dimension {
    pub fn canonical_unit(self) -> &'static str {
        match self {
            Dimension::Time => "s",
            Dimension::Frequency => "Hz",
            Dimension::Power => "uW",
            Dimension::RatePerPower => "Hz/uW",
            Dimension::RatePerPowerSquared => "Hz/uW^2",
        }
    }

    /// Power of ten converting `unit` into the canonical unit.
    fn scale(self, unit: &str) -> Option<i32> {
        let unit = normalize_unit(unit);
        let s = match (self, unit.as_str()) {
            (Dimension::Time, "s") => 0,
            (Dimension::Time, "ms") => -3,
            (Dimension::Time, "us") => -6,
            (Dimension::Time, "ns") => -9,
            (Dimension::Time, "ps") => -12,
            (Dimension::Frequency, "Hz") => 0,
            (Dimension::Frequency, "kHz") => 3,
            (Dimension::Frequency, "MHz") => 6,
            (Dimension::Frequency, "GHz") => 9,
            (Dimension::Power, "W") => 6,
            (Dimension::Power, "mW") => 3,
            (Dimension::Power, "uW") => 0,
            (Dimension::Power, "nW") => -3,
            (Dimension::RatePerPower, "Hz/uW") => 0,
            (Dimension::RatePerPower, "kHz/uW") => 3,
            (Dimension::RatePerPower, "MHz/uW") => 6,
            (Dimension::RatePerPower, "Hz/mW") => -3,
            (Dimension::RatePerPower, "kHz/mW") => 0,
            (Dimension::RatePerPowerSquared, "Hz/uW^2") => 0,
            (Dimension::RatePerPowerSquared, "kHz/uW^2") => 3,
            (Dimension::RatePerPowerSquared, "Hz/mW^2") => -6,
            _ => return None,
        };
        Some(s)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Time => "time",
            Dimension::Frequency => "frequency",
            Dimension::Power => "power",
            Dimension::RatePerPower => "rate per power",
            Dimension::RatePerPowerSquared => "rate per power squared",
        };
        f.write_str(name)
    }
}

// Accept the micro sign (U+00B5) and Greek mu (U+03BC) as aliases for `u`,
// and `²` for `^2`.
fn normalize_unit(unit: &str) -> String {
    unit.trim()
        .replace(['\u{00b5}', '\u{03bc}'], "u")
        .replace('\u{00b2}', "^2")
        .replace("sec", "s")
}

/// Parse `"<number> <unit>"` into the canonical unit of `dim`.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::domain(format!("empty {dim} quantity")));
    }
    let split = text
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-')
                && !((c == 'e' || c == 'E') && exponent_follows(&text[i + 1..]))
        })
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let unit = unit.trim();
    if unit.is_empty() {
        return Err(Error::domain(format!(
            "{dim} quantity `{text}` needs a unit suffix (e.g. {})",
            dim.canonical_unit()
        )));
    }
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::domain(format!("cannot parse number in `{text}`")))?;
    if !value.is_finite() {
        return Err(Error::domain(format!("non-finite value in `{text}`")));
    }
    let scale = dim
        .scale(unit)
        .ok_or_else(|| Error::domain(format!("unit `{unit}` is not a {dim} unit")))?;
    // Divide for negative exponents so that e.g. "5 us" is exactly 5e-6.
    Ok(if scale >= 0 {
        value * 10f64.powi(scale)
    } else {
        value / 10f64.powi(-scale)
    })
}

fn exponent_follows(rest: &str) -> bool {
    let rest = rest.strip_prefix(['+', '-']).unwrap_or(rest);
    rest.starts_with(|c: char| c.is_ascii_digit())
}

/// Render a canonical value with its canonical unit, e.g. `"5e-6 s"`.
pub fn format_quantity(value: f64, dim: Dimension) -> String {
    format!("{value:e} {}", dim.canonical_unit())
}

macro_rules! serde_dimension {
    ($name:ident, $dim:expr) => {
        /// Serde adapter for fields stored in canonical units of this dimension.
        pub mod $name {
            use super::Dimension;
            use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&super::format_quantity(*v, $dim))
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
                let text = String::deserialize(d).map_err(|_| {
                    D::Error::custom(format!(
                        "expected a string with a {} unit, e.g. \"1 {}\"",
                        $dim,
                        $dim.canonical_unit()
                    ))
                })?;
                super::parse_quantity(&text, $dim).map_err(D::Error::custom)
            }
        }
    };
}

serde_dimension!(time, Dimension::Time);
serde_dimension!(frequency, Dimension::Frequency);
serde_dimension!(power, Dimension::Power);
serde_dimension!(rate_per_power, Dimension::RatePerPower);
serde_dimension!(rate_per_power_squared, Dimension::RatePerPowerSquared);

/// Serde adapter for a list of durations, each a string with a time unit.
pub mod time_vec {
    use super::Dimension;
    use serde::{de::Error as _, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&super::format_quantity(*x, Dimension::Time))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| super::parse_quantity(t, Dimension::Time).map_err(D::Error::custom))
            .collect()
    }
}

/// Serde adapter for an optional duration.
pub mod opt_time {
    use super::Dimension;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_some(&super::format_quantity(*x, Dimension::Time)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| super::parse_quantity(&t, Dimension::Time).map_err(D::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_suffixes() {
        assert_eq!(parse_quantity("5 us", Dimension::Time).unwrap(), 5e-6);
        assert_eq!(parse_quantity("550ns", Dimension::Time).unwrap(), 550e-9);
        assert_eq!(parse_quantity("5 µs", Dimension::Time).unwrap(), 5e-6);
        assert_eq!(parse_quantity("89.5 kHz", Dimension::Frequency).unwrap(), 89.5e3);
        assert_eq!(parse_quantity("0.5 mW", Dimension::Power).unwrap(), 500.0);
        assert_eq!(parse_quantity("0.895 kHz/uW", Dimension::RatePerPower).unwrap(), 895.0);
        assert_eq!(parse_quantity("5.36 Hz/µW²", Dimension::RatePerPowerSquared).unwrap(), 5.36);
        assert_eq!(parse_quantity("1e-3 s", Dimension::Time).unwrap(), 1e-3);
        assert_eq!(parse_quantity("2.5E+1 us", Dimension::Time).unwrap(), 25e-6);
    }

    #[test]
    fn rejects_bare_numbers_and_wrong_dimensions() {
        assert!(parse_quantity("5", Dimension::Time).is_err());
        assert!(parse_quantity("5 kHz", Dimension::Time).is_err());
        assert!(parse_quantity("", Dimension::Power).is_err());
        assert!(parse_quantity("abc us", Dimension::Time).is_err());
        assert!(parse_quantity("inf us", Dimension::Time).is_err());
    }

    #[test]
    fn format_round_trips() {
        for &(v, d) in &[
            (5e-6, Dimension::Time),
            (89_500.0, Dimension::Frequency),
            (0.082, Dimension::RatePerPowerSquared),
        ] {
            assert_eq!(parse_quantity(&format_quantity(v, d), d).unwrap(), v);
        }
    }
}
