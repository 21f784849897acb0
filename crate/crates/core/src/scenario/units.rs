//! Quantities with explicit units, e.g. `"10 MHz"`, `"20 ns"`, `"5e-4 1/ns"`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

/// How a frequency written in Hz-based units maps to a Hamiltonian
/// coefficient in rad/ns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyConvention {
    /// `ω = 2π f` (1 MHz = 2π·10⁻³ rad/ns).
    Angular,
    /// `ω = f` (1 MHz = 10⁻³ rad/ns).
    Plain,
}

impl FrequencyConvention {
    fn factor(self) -> f64 {
        match self {
            FrequencyConvention::Angular => 2.0 * PI,
            FrequencyConvention::Plain => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Stored in rad/ns.
    Frequency,
    /// Stored in ns.
    Time,
    /// Stored in 1/ns.
    Rate,
    /// Stored in (rad/ns)².
    FrequencySquared,
    /// Stored in rad.
    Angle,
    Dimensionless,
}

impl Dimension {
    fn accepted(self) -> &'static str {
        match self {
            Dimension::Frequency => "GHz, MHz, kHz, rad/ns, rad/us",
            Dimension::Time => "ps, ns, us",
            Dimension::Rate => "1/ns, 1/us",
            Dimension::FrequencySquared => "(rad/ns)^2, MHz^2",
            Dimension::Angle => "rad, deg",
            Dimension::Dimensionless => "no unit",
        }
    }
}

/// A scalar as written in a scenario file: either a bare number (only valid
/// for dimensionless quantities) or `"<number> <unit>"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Number(x) => write!(f, "{x}"),
            Quantity::Text(s) => write!(f, "{s:?}"),
        }
    }
}

impl Quantity {
    /// Value in internal units (rad/ns, ns, 1/ns, rad).
    pub fn resolve(&self, dim: Dimension, conv: FrequencyConvention) -> Result<f64, String> {
        let (value, unit) = match self {
            Quantity::Number(x) => (*x, ""),
            Quantity::Text(s) => split(s)?,
        };
        let scale = unit_scale(unit, dim, conv).ok_or_else(|| {
            if unit.is_empty() {
                format!("{self} needs a unit (one of {})", dim.accepted())
            } else {
                format!("unit {unit:?} in {self} is not one of {}", dim.accepted())
            }
        })?;
        let v = value * scale;
        if !v.is_finite() {
            return Err(format!("{self} is not finite"));
        }
        Ok(v)
    }
}

fn split(s: &str) -> Result<(f64, &str), String> {
    let s = s.trim();
    let end = s
        .find(|c: char| c.is_whitespace())
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(end);
    let value = num
        .parse::<f64>()
        .map_err(|_| format!("cannot read a number from {s:?}"))?;
    Ok((value, unit.trim()))
}

fn unit_scale(unit: &str, dim: Dimension, conv: FrequencyConvention) -> Option<f64> {
    let c = conv.factor();
    let s = match (dim, unit) {
        (Dimension::Dimensionless, "") => 1.0,
        (Dimension::Frequency, "GHz") => c,
        (Dimension::Frequency, "MHz") => c * 1e-3,
        (Dimension::Frequency, "kHz") => c * 1e-6,
        (Dimension::Frequency, "rad/ns") => 1.0,
        (Dimension::Frequency, "rad/us") => 1e-3,
        (Dimension::Time, "ps") => 1e-3,
        (Dimension::Time, "ns") => 1.0,
        (Dimension::Time, "us") => 1e3,
        (Dimension::Rate, "1/ns") => 1.0,
        (Dimension::Rate, "1/us") => 1e-3,
        (Dimension::FrequencySquared, "(rad/ns)^2") => 1.0,
        (Dimension::FrequencySquared, "MHz^2") => (c * 1e-3).powi(2),
        (Dimension::Angle, "rad") => 1.0,
        (Dimension::Angle, "deg") => PI / 180.0,
        _ => return None,
    };
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Quantity {
        Quantity::Text(s.into())
    }

    #[test]
    fn megahertz_conventions() {
        let a = q("10 MHz").resolve(Dimension::Frequency, FrequencyConvention::Angular).unwrap();
        assert!((a - 2.0 * PI * 1e-2).abs() < 1e-15);
        let p = q("10 MHz").resolve(Dimension::Frequency, FrequencyConvention::Plain).unwrap();
        assert!((p - 1e-2).abs() < 1e-15);
        let r = q("-3 rad/ns").resolve(Dimension::Frequency, FrequencyConvention::Angular).unwrap();
        assert_eq!(r, -3.0);
    }

    #[test]
    fn other_dimensions() {
        let conv = FrequencyConvention::Angular;
        assert_eq!(q("0.2 us").resolve(Dimension::Time, conv).unwrap(), 200.0);
        assert!((q("90 deg").resolve(Dimension::Angle, conv).unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(q("5e-4 1/ns").resolve(Dimension::Rate, conv).unwrap(), 5e-4);
        assert_eq!(Quantity::Number(1e-6).resolve(Dimension::Dimensionless, conv).unwrap(), 1e-6);
    }

    #[test]
    fn missing_or_wrong_units() {
        let conv = FrequencyConvention::Angular;
        let e = Quantity::Number(20.0).resolve(Dimension::Time, conv).unwrap_err();
        assert!(e.contains("needs a unit"), "{e}");
        let e = q("20 MHz").resolve(Dimension::Time, conv).unwrap_err();
        assert!(e.contains("not one of ps, ns, us"), "{e}");
        assert!(q("abc ns").resolve(Dimension::Time, conv).is_err());
    }
}
