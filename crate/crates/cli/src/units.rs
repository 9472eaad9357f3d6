//! Quantity strings such as "2.1 MHz" or "30 um" parsed to SI.
//!
//! Frequencies written in Hz-family units are cyclic and come back as angular frequency
//! (rad/s), multiplied by 2π. Writing "rad/s" skips the conversion. A bare number for a
//! dimensional quantity is rejected rather than guessed.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("'{0}' has no unit; write e.g. \"{1}\"")]
    MissingUnit(String, &'static str),
    #[error("unknown {kind} unit '{unit}' in '{text}'")]
    UnknownUnit { kind: &'static str, unit: String, text: String },
    #[error("cannot read a number from '{0}'")]
    BadNumber(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Length,
    Time,
    /// Returned as angular frequency, rad/s.
    Frequency,
    MagneticField,
    Voltage,
    Angle,
    Wavenumber,
    Capacitance,
    Resistance,
}

impl Dim {
    fn name(self) -> &'static str {
        match self {
            Dim::Length => "length",
            Dim::Time => "time",
            Dim::Frequency => "frequency",
            Dim::MagneticField => "magnetic field",
            Dim::Voltage => "voltage",
            Dim::Angle => "angle",
            Dim::Wavenumber => "wavenumber",
            Dim::Capacitance => "capacitance",
            Dim::Resistance => "resistance",
        }
    }

    fn example(self) -> &'static str {
        match self {
            Dim::Length => "30 um",
            Dim::Time => "16 us",
            Dim::Frequency => "2.1 MHz",
            Dim::MagneticField => "2.5 T",
            Dim::Voltage => "135 V",
            Dim::Angle => "20 deg",
            Dim::Wavenumber => "1.75e6 rad/m",
            Dim::Capacitance => "1 pF",
            Dim::Resistance => "1 ohm",
        }
    }

    fn factor(self, unit: &str) -> Option<f64> {
        let two_pi = 2.0 * PI;
        let f = match (self, unit) {
            (Dim::Length, "m") => 1.0,
            (Dim::Length, "cm") => 1e-2,
            (Dim::Length, "mm") => 1e-3,
            (Dim::Length, "um" | "µm" | "μm") => 1e-6,
            (Dim::Length, "nm") => 1e-9,
            (Dim::Time, "s") => 1.0,
            (Dim::Time, "ms") => 1e-3,
            (Dim::Time, "us" | "µs" | "μs") => 1e-6,
            (Dim::Time, "ns") => 1e-9,
            (Dim::Frequency, "Hz") => two_pi,
            (Dim::Frequency, "kHz") => two_pi * 1e3,
            (Dim::Frequency, "MHz") => two_pi * 1e6,
            (Dim::Frequency, "GHz") => two_pi * 1e9,
            (Dim::Frequency, "rad/s") => 1.0,
            (Dim::MagneticField, "T") => 1.0,
            (Dim::MagneticField, "mT") => 1e-3,
            (Dim::MagneticField, "G") => 1e-4,
            (Dim::Voltage, "V") => 1.0,
            (Dim::Voltage, "mV") => 1e-3,
            (Dim::Voltage, "kV") => 1e3,
            (Dim::Angle, "deg") => PI / 180.0,
            (Dim::Angle, "rad") => 1.0,
            (Dim::Angle, "mrad") => 1e-3,
            (Dim::Wavenumber, "rad/m" | "1/m") => 1.0,
            (Dim::Wavenumber, "rad/um" | "1/um") => 1e6,
            (Dim::Capacitance, "F") => 1.0,
            (Dim::Capacitance, "uF" | "µF") => 1e-6,
            (Dim::Capacitance, "nF") => 1e-9,
            (Dim::Capacitance, "pF") => 1e-12,
            (Dim::Capacitance, "fF") => 1e-15,
            (Dim::Resistance, "ohm" | "Ω") => 1.0,
            (Dim::Resistance, "mohm" | "mΩ") => 1e-3,
            (Dim::Resistance, "kohm" | "kΩ") => 1e3,
            _ => return None,
        };
        Some(f)
    }
}

/// Split "value unit" at the first character that cannot continue a number.
fn split(text: &str) -> (&str, &str) {
    let t = text.trim();
    let mut end = 0;
    let bytes = t.as_bytes();
    while end < bytes.len() {
        let c = bytes[end] as char;
        let exp_sign = (c == '+' || c == '-') && end > 0 && matches!(bytes[end - 1] as char, 'e' | 'E');
        let exp = (c == 'e' || c == 'E') && end > 0 && bytes[end - 1].is_ascii_digit()
            && bytes.get(end + 1).is_some_and(|n| n.is_ascii_digit() || *n == b'+' || *n == b'-');
        if c.is_ascii_digit() || c == '.' || (end == 0 && (c == '+' || c == '-')) || exp || exp_sign {
            end += 1;
        } else {
            break;
        }
    }
    (t[..end].trim(), t[end..].trim())
}

pub fn parse_quantity(text: &str, dim: Dim) -> Result<f64, UnitError> {
    let (num, unit) = split(text);
    let value: f64 = num.parse().map_err(|_| UnitError::BadNumber(text.to_string()))?;
    if unit.is_empty() {
        return Err(UnitError::MissingUnit(text.to_string(), dim.example()));
    }
    let f = dim.factor(unit).ok_or_else(|| UnitError::UnknownUnit {
        kind: dim.name(),
        unit: unit.to_string(),
        text: text.to_string(),
    })?;
    Ok(value * f)
}

/// Laser detuning: a frequency (→ rad/s) or a multiple of the natural linewidth ("-2 gamma").
pub fn parse_detuning(text: &str, linewidth: f64) -> Result<f64, UnitError> {
    let (num, unit) = split(text);
    if matches!(unit, "gamma" | "Gamma" | "Γ") {
        let value: f64 = num.parse().map_err(|_| UnitError::BadNumber(text.to_string()))?;
        return Ok(value * linewidth);
    }
    parse_quantity(text, Dim::Frequency)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_quantities() {
        assert!((parse_quantity("2.1 MHz", Dim::Frequency).unwrap() - 2.0 * PI * 2.1e6).abs() < 1e-6);
        assert_eq!(parse_quantity("30 um", Dim::Length).unwrap(), 30.0 * 1e-6);
        assert_eq!(parse_quantity("30um", Dim::Length).unwrap(), 30.0 * 1e-6);
        assert_eq!(parse_quantity("1.5e-3 s", Dim::Time).unwrap(), 1.5e-3);
        assert_eq!(parse_quantity("-2e3 rad/s", Dim::Frequency).unwrap(), -2e3);
        assert_eq!(parse_quantity("2.5 T", Dim::MagneticField).unwrap(), 2.5);
        assert!((parse_quantity("90 deg", Dim::Angle).unwrap() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_ambiguous_input() {
        assert!(matches!(parse_quantity("2.1", Dim::Frequency), Err(UnitError::MissingUnit(..))));
        assert!(matches!(parse_quantity("2.1 MHz", Dim::Length), Err(UnitError::UnknownUnit { .. })));
        assert!(matches!(parse_quantity("fast", Dim::Time), Err(UnitError::BadNumber(_))));
        assert!(matches!(parse_quantity("2 mhz", Dim::Frequency), Err(UnitError::UnknownUnit { .. })));
    }

    #[test]
    fn detuning_in_linewidths() {
        assert_eq!(parse_detuning("-2 gamma", 10.0).unwrap(), -20.0);
        assert!((parse_detuning("-1 MHz", 10.0).unwrap() + 2.0 * PI * 1e6).abs() < 1e-6);
    }
}
