//! Run configuration: a TOML document validated field by field before any computation.
//!
//! Every table rejects unknown keys. Dimensional values are strings with explicit units
//! (see `units`); dimensionless values are plain numbers.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::Deserialize;
use thiserror::Error;

use penning_core::model::{
    build_lattice, constants::HBAR, curvature_to_axial_frequency, ArrayConfig, Centering, IonSpecies, LatticeKind,
    LatticeSpec, ModelError,
};

use crate::units::{parse_detuning, parse_quantity, Dim, UnitError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config syntax or schema error: {0}")]
    Schema(String),
    #[error("field '{field}': {source}")]
    Unit { field: String, source: UnitError },
    #[error("field '{field}': {reason}")]
    Invalid { field: String, reason: String },
    #[error("missing block [{0}] required by this command")]
    MissingBlock(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

pub(crate) fn quantity(field: &str, text: &str, dim: Dim) -> Result<f64, ConfigError> {
    parse_quantity(text, dim).map_err(|source| ConfigError::Unit { field: field.to_string(), source })
}

fn vector(field: &str, v: &[f64]) -> Result<Vector3<f64>, ConfigError> {
    if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(field, "expected three finite components"));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_species")]
    pub species: String,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub lattice: LatticeBlock,
    pub field: FieldBlock,
    pub trap: TrapBlock,
    #[serde(default, rename = "override")]
    pub overrides: Vec<OverrideBlock>,
    pub cooling: Option<CoolingBlock>,
    pub spinspin: Option<SpinSpinBlock>,
    pub gate: Option<GateBlock>,
}

fn default_species() -> String {
    "Be9+".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub kind: String,
    pub d: String,
    pub n_sites: usize,
    /// Tilt of the confining axes from the plane normal.
    pub theta: String,
    pub centering: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldBlock {
    pub b0: String,
    /// Unit vector of B; omitted means B along the confining axis.
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapBlock {
    pub omega_z: Option<String>,
    /// Dimensionless curvature κ with voltage V and length scale h.
    pub kappa: Option<f64>,
    pub voltage: Option<String>,
    pub h: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideBlock {
    pub site: usize,
    pub omega_z: Option<String>,
    pub curvature_scale: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolingBlock {
    pub t_end: String,
    pub n_traj: usize,
    pub sample_interval: String,
    /// Frequency or multiple of the natural linewidth, e.g. "-2 gamma".
    pub detuning: String,
    pub saturation: f64,
    pub beam: Vec<f64>,
    /// φ_ax/φ₀; zero switches axialization off.
    pub axialization: f64,
    pub axialization_frequency: Option<String>,
    #[serde(default = "default_quanta")]
    pub initial_quanta: f64,
    #[serde(default = "default_spread")]
    pub initial_spread: f64,
    pub integrator: Option<String>,
    pub dt: Option<String>,
}

fn default_quanta() -> f64 {
    1e4
}

fn default_spread() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveBlock {
    /// Direct magnitude of the difference wavevector.
    pub k_r: Option<String>,
    /// Raman wavelength and full crossing angle θ_R: |k_R| = 2(2π/λ)sin(θ_R/2).
    pub wavelength: Option<String>,
    pub crossing_angle: Option<String>,
    pub direction: Vec<f64>,
}

impl WaveBlock {
    pub fn vector(&self, field: &str) -> Result<Vector3<f64>, ConfigError> {
        let dir = vector(&format!("{field}.direction"), &self.direction)?
            .try_normalize(0.0)
            .ok_or_else(|| invalid(field, "direction is the zero vector"))?;
        let k = match (&self.k_r, &self.wavelength, &self.crossing_angle) {
            (Some(k), None, None) => quantity(&format!("{field}.k_r"), k, Dim::Wavenumber)?,
            (None, Some(l), Some(a)) => {
                let l = quantity(&format!("{field}.wavelength"), l, Dim::Length)?;
                let a = quantity(&format!("{field}.crossing_angle"), a, Dim::Angle)?;
                2.0 * (2.0 * std::f64::consts::PI / l) * (0.5 * a).sin()
            }
            _ => return Err(invalid(field, "give either k_r or wavelength with crossing_angle")),
        };
        Ok(dir * k)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSpinBlock {
    /// E_O/ħ as a cyclic frequency.
    pub e_o: String,
    pub wave: WaveBlock,
    /// Branch whose COM mode anchors the detunings: axial, cyclotron or magnetron.
    pub branch: String,
    /// Reference frequency of the branch: "com" (default), "top" or "bottom".
    #[serde(default = "default_anchor")]
    pub anchor: String,
    /// μ_R = ω_anchor + 2π·δ for each listed δ. The first entry also sets J.csv and histogram.csv.
    pub detunings: Vec<String>,
    #[serde(default = "default_phases")]
    pub phases: String,
    pub fit_range: Option<Vec<String>>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    pub resonance_guard: Option<String>,
}

fn default_anchor() -> String {
    "com".to_string()
}

fn default_phases() -> String {
    "equal".to_string()
}

fn default_bins() -> usize {
    40
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateBlock {
    pub pair: Vec<usize>,
    pub e_o: String,
    pub wave: WaveBlock,
    /// Beatnote; omitted means ω_c/2.
    pub mu: Option<String>,
    /// Raise both pair sites' axial frequency by this amount.
    pub pair_shift: Option<String>,
    /// Or tune the shift until Δ_{c,+}/Δ_{s,+} equals this ratio, searching `tune_bracket`.
    pub tune_ratio: Option<f64>,
    pub tune_bracket: Option<Vec<String>>,
    pub scan: ScanBlock,
    pub phases: Option<Vec<f64>>,
    pub resonance_guard: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBlock {
    /// "time" or "mu".
    pub variable: String,
    pub start: String,
    pub stop: String,
    pub points: usize,
    /// Fixed pulse length for a beatnote scan.
    pub duration: Option<String>,
}

/// Parsed configuration plus its raw text (hashed into the manifest).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub raw: String,
    pub run: RunConfig,
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse(&raw)
}

pub fn parse(raw: &str) -> Result<LoadedConfig, ConfigError> {
    let run: RunConfig = toml::from_str(raw).map_err(|e| ConfigError::Schema(e.to_string()))?;
    let loaded = LoadedConfig { raw: raw.to_string(), run };
    loaded.validate()?;
    Ok(loaded)
}

/// Physical inputs resolved to SI.
#[derive(Debug, Clone)]
pub struct Physical {
    pub array: ArrayConfig,
    pub omega_z: f64,
}

impl LoadedConfig {
    /// Check every block that is present, so a bad value fails before any command runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let phys = self.physical()?;
        if let Some(c) = &self.run.cooling {
            c.resolve(&phys.array)?;
        }
        if let Some(s) = &self.run.spinspin {
            s.resolve()?;
        }
        if let Some(g) = &self.run.gate {
            g.resolve(phys.array.n_ions())?;
        }
        Ok(())
    }

    pub fn species(&self) -> Result<IonSpecies, ConfigError> {
        Ok(IonSpecies::lookup(&self.run.species)?)
    }

    pub fn physical(&self) -> Result<Physical, ConfigError> {
        let species = self.species()?;
        let l = &self.run.lattice;
        let kind: LatticeKind = l.kind.parse()?;
        let centering = match &l.centering {
            Some(c) => Some(c.parse::<Centering>()?),
            None => None,
        };
        let spacing = quantity("lattice.d", &l.d, Dim::Length)?;
        let tilt = quantity("lattice.theta", &l.theta, Dim::Angle)?;
        let t = &self.run.trap;
        let omega_z = match (&t.omega_z, t.kappa, &t.voltage, &t.h) {
            (Some(w), None, None, None) => quantity("trap.omega_z", w, Dim::Frequency)?,
            (None, Some(k), Some(v), Some(h)) => {
                let v = quantity("trap.voltage", v, Dim::Voltage)?;
                let h = quantity("trap.h", h, Dim::Length)?;
                curvature_to_axial_frequency(k, v, h, &species)?
            }
            _ => return Err(invalid("trap", "give either omega_z or all of kappa, voltage, h")),
        };
        let b0 = quantity("field.b0", &self.run.field.b0, Dim::MagneticField)?;
        let dir = match &self.run.field.direction {
            Some(d) => Some(vector("field.direction", d)?),
            None => None,
        };
        let mut overrides = BTreeMap::new();
        for o in &self.run.overrides {
            let scale = match (&o.omega_z, o.curvature_scale) {
                (Some(w), None) => (quantity("override.omega_z", w, Dim::Frequency)? / omega_z).powi(2),
                (None, Some(s)) => s,
                _ => return Err(invalid("override", "give exactly one of omega_z or curvature_scale")),
            };
            if overrides.insert(o.site, scale).is_some() {
                return Err(invalid("override", format!("site {} listed twice", o.site)));
            }
        }
        let spec = LatticeSpec { kind, spacing, n_sites: l.n_sites, tilt, centering };
        let array = build_lattice(&spec, &species, b0, dir, omega_z, overrides)?;
        Ok(Physical { array, omega_z })
    }
}

#[derive(Debug, Clone)]
pub struct CoolingInputs {
    pub t_end: f64,
    pub n_traj: usize,
    pub sample_interval: f64,
    pub detuning: f64,
    pub saturation: f64,
    pub beam: Vector3<f64>,
    pub axialization: f64,
    pub axialization_frequency: Option<f64>,
    pub initial_quanta: f64,
    pub initial_spread: f64,
    pub rk4: bool,
    pub dt: Option<f64>,
}

impl CoolingBlock {
    pub fn resolve(&self, array: &ArrayConfig) -> Result<CoolingInputs, ConfigError> {
        let t_end = quantity("cooling.t_end", &self.t_end, Dim::Time)?;
        let sample_interval = quantity("cooling.sample_interval", &self.sample_interval, Dim::Time)?;
        let detuning = parse_detuning(&self.detuning, array.species.natural_linewidth)
            .map_err(|source| ConfigError::Unit { field: "cooling.detuning".into(), source })?;
        let beam = vector("cooling.beam", &self.beam)?;
        if beam.norm() == 0.0 {
            return Err(invalid("cooling.beam", "zero vector"));
        }
        if self.n_traj == 0 {
            return Err(invalid("cooling.n_traj", "at least one trajectory"));
        }
        if !(t_end > 0.0) || !(sample_interval > 0.0) {
            return Err(invalid("cooling", "t_end and sample_interval must be positive"));
        }
        if !(self.saturation >= 0.0) || !(self.axialization >= 0.0) {
            return Err(invalid("cooling", "saturation and axialization must be non-negative"));
        }
        let rk4 = match self.integrator.as_deref() {
            None | Some("split") => false,
            Some("rk4") => true,
            Some(other) => return Err(invalid("cooling.integrator", format!("'{other}' is not split or rk4"))),
        };
        Ok(CoolingInputs {
            t_end,
            n_traj: self.n_traj,
            sample_interval,
            detuning,
            saturation: self.saturation,
            beam,
            axialization: self.axialization,
            axialization_frequency: match &self.axialization_frequency {
                Some(f) => Some(quantity("cooling.axialization_frequency", f, Dim::Frequency)?),
                None => None,
            },
            initial_quanta: self.initial_quanta,
            initial_spread: self.initial_spread,
            rk4,
            dt: match &self.dt {
                Some(d) => Some(quantity("cooling.dt", d, Dim::Time)?),
                None => None,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct SpinSpinInputs {
    pub e_o: f64,
    pub k_r: Vector3<f64>,
    pub branch: penning_core::modes::ModeKind,
    pub anchor: Anchor,
    /// rad/s
    pub detunings: Vec<f64>,
    pub from_positions: bool,
    pub fit_range: Option<(f64, f64)>,
    pub histogram_bins: usize,
    pub resonance_guard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Com,
    Top,
    Bottom,
}

pub(crate) fn mode_kind(field: &str, s: &str) -> Result<penning_core::modes::ModeKind, ConfigError> {
    use penning_core::modes::ModeKind;
    match s {
        "axial" => Ok(ModeKind::Axial),
        "cyclotron" => Ok(ModeKind::Cyclotron),
        "magnetron" => Ok(ModeKind::Magnetron),
        other => Err(invalid(field, format!("'{other}' is not axial, cyclotron or magnetron"))),
    }
}

impl SpinSpinBlock {
    pub fn resolve(&self) -> Result<SpinSpinInputs, ConfigError> {
        let e_o = HBAR * quantity("spinspin.e_o", &self.e_o, Dim::Frequency)?;
        let k_r = self.wave.vector("spinspin.wave")?;
        if self.detunings.is_empty() {
            return Err(invalid("spinspin.detunings", "at least one detuning"));
        }
        let detunings = self
            .detunings
            .iter()
            .map(|d| quantity("spinspin.detunings", d, Dim::Frequency))
            .collect::<Result<Vec<_>, _>>()?;
        let from_positions = match self.phases.as_str() {
            "equal" => false,
            "positions" => true,
            other => return Err(invalid("spinspin.phases", format!("'{other}' is not equal or positions"))),
        };
        let fit_range = match &self.fit_range {
            None => None,
            Some(v) if v.len() == 2 => Some((
                quantity("spinspin.fit_range", &v[0], Dim::Length)?,
                quantity("spinspin.fit_range", &v[1], Dim::Length)?,
            )),
            Some(_) => return Err(invalid("spinspin.fit_range", "expected [min, max]")),
        };
        if self.histogram_bins == 0 {
            return Err(invalid("spinspin.histogram_bins", "must be positive"));
        }
        let anchor = match self.anchor.as_str() {
            "com" => Anchor::Com,
            "top" => Anchor::Top,
            "bottom" => Anchor::Bottom,
            other => return Err(invalid("spinspin.anchor", format!("'{other}' is not com, top or bottom"))),
        };
        Ok(SpinSpinInputs {
            e_o,
            k_r,
            branch: mode_kind("spinspin.branch", &self.branch)?,
            anchor,
            detunings,
            from_positions,
            fit_range,
            histogram_bins: self.histogram_bins,
            resonance_guard: match &self.resonance_guard {
                Some(g) => Some(quantity("spinspin.resonance_guard", g, Dim::Frequency)?),
                None => None,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub enum PairTuning {
    None,
    Shift(f64),
    Ratio { target: f64, bracket: (f64, f64) },
}

#[derive(Debug, Clone)]
pub struct GateInputs {
    pub pair: (usize, usize),
    pub e_o: f64,
    pub k_r: Vector3<f64>,
    pub mu: Option<f64>,
    pub tuning: PairTuning,
    pub time_scan: bool,
    pub grid: Vec<f64>,
    pub duration: Option<f64>,
    pub phases: [f64; 2],
    pub resonance_guard: Option<f64>,
}

impl GateBlock {
    pub fn resolve(&self, n_ions: usize) -> Result<GateInputs, ConfigError> {
        if self.pair.len() != 2 {
            return Err(invalid("gate.pair", "expected two site indices"));
        }
        let pair = (self.pair[0], self.pair[1]);
        if pair.0 == pair.1 || pair.0 >= n_ions || pair.1 >= n_ions {
            return Err(invalid("gate.pair", format!("need two distinct indices below {n_ions}")));
        }
        let e_o = HBAR * quantity("gate.e_o", &self.e_o, Dim::Frequency)?;
        let k_r = self.wave.vector("gate.wave")?;
        let mu = match &self.mu {
            Some(m) => Some(quantity("gate.mu", m, Dim::Frequency)?),
            None => None,
        };
        let tuning = match (&self.pair_shift, self.tune_ratio, &self.tune_bracket) {
            (None, None, None) => PairTuning::None,
            (Some(s), None, None) => PairTuning::Shift(quantity("gate.pair_shift", s, Dim::Frequency)?),
            (None, Some(r), Some(b)) if b.len() == 2 => PairTuning::Ratio {
                target: r,
                bracket: (
                    quantity("gate.tune_bracket", &b[0], Dim::Frequency)?,
                    quantity("gate.tune_bracket", &b[1], Dim::Frequency)?,
                ),
            },
            _ => return Err(invalid("gate", "give pair_shift, or tune_ratio with a two-entry tune_bracket, or neither")),
        };
        let s = &self.scan;
        let time_scan = match s.variable.as_str() {
            "time" => true,
            "mu" => false,
            other => return Err(invalid("gate.scan.variable", format!("'{other}' is not time or mu"))),
        };
        let dim = if time_scan { Dim::Time } else { Dim::Frequency };
        let start = quantity("gate.scan.start", &s.start, dim)?;
        let stop = quantity("gate.scan.stop", &s.stop, dim)?;
        if s.points == 0 {
            return Err(invalid("gate.scan.points", "grid must be non-empty"));
        }
        let grid: Vec<f64> = if s.points == 1 {
            vec![start]
        } else {
            (0..s.points).map(|i| start + (stop - start) * i as f64 / (s.points - 1) as f64).collect()
        };
        if time_scan && grid.iter().any(|&t| t < 0.0) {
            return Err(invalid("gate.scan", "times must be non-negative"));
        }
        let duration = match &s.duration {
            Some(d) => Some(quantity("gate.scan.duration", d, Dim::Time)?),
            None if !time_scan => return Err(invalid("gate.scan.duration", "required for a beatnote scan")),
            None => None,
        };
        let phases = match &self.phases {
            None => [0.0, 0.0],
            Some(p) if p.len() == 2 => [p[0], p[1]],
            Some(_) => return Err(invalid("gate.phases", "expected two values in rad")),
        };
        Ok(GateInputs {
            pair,
            e_o,
            k_r,
            mu,
            tuning,
            time_scan,
            grid,
            duration,
            phases,
            resonance_guard: match &self.resonance_guard {
                Some(g) => Some(quantity("gate.resonance_guard", g, Dim::Frequency)?),
                None => None,
            },
        })
    }
}
