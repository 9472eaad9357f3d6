//! Monte Carlo Doppler cooling with an axialization drive.
//!
//! Each trajectory integrates the linearized equations of motion, applies the oscillating
//! (x² − y²) site quadrupole, and scatters photons with a Doppler-shifted two-level rate.
//! Occupations are read off by projecting the phase-space state on the mode basis.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::integrate::{first_order_matrix, rk4_step, LinearPropagator};
use crate::model::constants::HBAR;
use crate::model::{ArrayConfig, IonSpecies};
use crate::modes::{
    reconstruct_state, solve_modes, ModeKind, ModeOptions, ModeSet, ModesError, SystemMatrices,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoolingError {
    #[error("invalid cooling parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("time step {dt:.3e} s exceeds the limit {limit:.3e} s")]
    StepSizeTooLarge { dt: f64, limit: f64 },
    #[error("trajectory {trajectory} became unstable at t = {time:.3e} s")]
    UnstableIntegration { trajectory: usize, time: f64 },
    #[error(transparent)]
    Modes(#[from] ModesError),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> CoolingError {
    CoolingError::InvalidParameter { name, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserParams {
    /// rad/m
    pub k_vector: Vector3<f64>,
    /// Detuning from the rest-frame resonance, rad/s.
    pub detuning: f64,
    pub saturation: f64,
    /// Γ, rad/s
    pub linewidth: f64,
    /// m
    pub wavelength: f64,
}

impl LaserParams {
    pub fn new(k_vector: Vector3<f64>, detuning: f64, saturation: f64, linewidth: f64, wavelength: f64) -> Result<Self, CoolingError> {
        if !(wavelength > 0.0) {
            return Err(invalid("wavelength", "must be positive"));
        }
        let k = 2.0 * PI / wavelength;
        if (k_vector.norm() - k).abs() > 1e-9 * k {
            return Err(invalid("k_vector", "magnitude must equal 2π/wavelength"));
        }
        if !(saturation >= 0.0) {
            return Err(invalid("saturation", "must be non-negative"));
        }
        if !(linewidth > 0.0) {
            return Err(invalid("linewidth", "must be positive"));
        }
        Ok(Self { k_vector, detuning, saturation, linewidth, wavelength })
    }

    /// Beam of the species' cooling transition along `direction`.
    pub fn along(species: &IonSpecies, direction: Vector3<f64>, detuning: f64, saturation: f64) -> Result<Self, CoolingError> {
        let dir = direction.try_normalize(0.0).ok_or_else(|| invalid("direction", "zero vector"))?;
        let k = 2.0 * PI / species.cooling_wavelength;
        Self::new(dir * k, detuning, saturation, species.natural_linewidth, species.cooling_wavelength)
    }

    pub fn is_off(&self) -> bool {
        self.saturation == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxializationParams {
    /// φ_ax/φ₀
    pub fraction: f64,
    /// rad/s
    pub drive_frequency: f64,
}

impl AxializationParams {
    pub fn off() -> Self {
        Self { fraction: 0.0, drive_frequency: 0.0 }
    }
}

/// Γ/2 · s / (1 + s + (2δ_eff/Γ)²) with δ_eff = δ − k·v.
pub fn scattering_rate(laser: &LaserParams, velocity: &Vector3<f64>) -> f64 {
    let d = laser.detuning - laser.k_vector.dot(velocity);
    let x = 2.0 * d / laser.linewidth;
    0.5 * laser.linewidth * laser.saturation / (1.0 + laser.saturation + x * x)
}

/// Radial frame (x′, y′) of a site and its quadrupole scale λ_max(Q), V/m².
fn site_frame(tensor: &Matrix3<f64>) -> (Vector3<f64>, Vector3<f64>, f64) {
    let eig = SymmetricEigen::new(*tensor);
    let (imax, lmax) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let n = eig.eigenvectors.column(imax).into_owned();
    let x = Vector3::y()
        .cross(&n)
        .try_normalize(1e-6)
        .or_else(|| Vector3::z().cross(&n).try_normalize(1e-6))
        .unwrap_or(Vector3::x());
    let y = n.cross(&x);
    (x, y, lmax)
}

/// Force −e∇[φ_ax((x′−x′_c)² − (y′−y′_c)²)/h²]·cos(ω_d t) on an ion at `position` in `site`,
/// with φ₀/h² taken as the site's axial curvature.
pub fn axialization_force(
    axial: &AxializationParams,
    config: &ArrayConfig,
    site: usize,
    position: &Vector3<f64>,
    t: f64,
) -> Vector3<f64> {
    if axial.fraction == 0.0 {
        return Vector3::zeros();
    }
    let (x, y, scale) = site_frame(&config.site_tensor(site));
    let d = position - config.sites[site].center;
    let g = 2.0 * config.species.charge * axial.fraction * scale * (axial.drive_frequency * t).cos();
    -(x * x.dot(&d) - y * y.dot(&d)) * g
}

/// ω₊ + ω₋ of a single ion in `site` alone, the default axialization drive.
pub fn axialization_frequency(config: &ArrayConfig, site: usize) -> Result<f64, CoolingError> {
    let phi = config.site_tensor(site) * (2.0 * config.species.charge);
    let phi = nalgebra::DMatrix::from_fn(3, 3, |i, j| phi[(i, j)]);
    let mats = SystemMatrices::from_parts(&[config.species.mass], config.species.charge, config.b_field, phi)?;
    let set = solve_modes(&mats, &ModeOptions::default())?;
    let radial: f64 = set
        .modes
        .iter()
        .filter(|m| m.kind != ModeKind::Axial)
        .map(|m| m.omega)
        .sum();
    Ok(radial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// Exact linear flow with the axialization force applied as a midpoint impulse.
    SplitExact,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialQuanta {
    /// n = mean·(1 + spread·u), u uniform in [−1, 1].
    Uniform { mean: f64, spread: f64 },
    PerMode(Vec<f64>),
}

impl Default for InitialQuanta {
    fn default() -> Self {
        Self::Uniform { mean: 1e4, spread: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoolingOptions {
    pub t_end: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// `None` uses the largest step with dt·ω_max ≤ 0.02·2π that divides the sample interval.
    pub dt: Option<f64>,
    pub sample_interval: f64,
    pub integrator: Integrator,
    pub initial: InitialQuanta,
}

impl Default for CoolingOptions {
    fn default() -> Self {
        Self {
            t_end: 1e-3,
            n_traj: 100,
            seed: 1,
            dt: None,
            sample_interval: 5e-6,
            integrator: Integrator::SplitExact,
            initial: InitialQuanta::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub tau: f64,
    pub n_inf: f64,
    pub amplitude: f64,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCooling {
    pub mode_index: usize,
    pub kind: ModeKind,
    pub n_initial: f64,
    /// Mean occupation over the last tenth of the run.
    pub n_final: f64,
    pub fit: ExpFit,
}

impl ModeCooling {
    pub fn cooled(&self) -> bool {
        self.n_final < self.n_initial
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoolingRecord {
    pub times: Vec<f64>,
    /// occupation[mode][sample], trajectory mean.
    pub occupation: Vec<Vec<f64>>,
    /// Standard error of the mean, same layout.
    pub std_error: Vec<Vec<f64>>,
    pub summary: Vec<ModeCooling>,
    pub n_traj: usize,
    pub seed: u64,
    pub dt: f64,
    pub laser: LaserParams,
    pub axialization: AxializationParams,
}

impl CoolingRecord {
    /// True when the total occupation fell below half its initial value. Axialization alone
    /// only trades quanta between the radial branches, so single modes are not a reliable signal.
    pub fn cooling_detected(&self) -> bool {
        let initial: f64 = self.summary.iter().map(|m| m.n_initial).sum();
        let fin: f64 = self.summary.iter().map(|m| m.n_final).sum();
        fin < 0.5 * initial
    }
}

/// Least-squares fit of n(t) = n_∞ + A·e^{−t/τ}; τ is scanned on a log grid and refined by
/// golden-section search, with (n_∞, A) solved linearly at each τ.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> ExpFit {
    let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    let t0 = times.first().copied().unwrap_or(0.0);
    let solve = |tau: f64| -> (f64, f64, f64) {
        let (mut s1, mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in times.iter().zip(values) {
            let e = (-(t - t0) / tau).exp();
            s1 += 1.0;
            se += e;
            see += e * e;
            sy += y;
            sey += e * y;
        }
        let det = s1 * see - se * se;
        let (c, a) = if det.abs() > 1e-300 {
            ((see * sy - se * sey) / det, (s1 * sey - se * sy) / det)
        } else {
            (sy / s1, 0.0)
        };
        let rss: f64 = times
            .iter()
            .zip(values)
            .map(|(&t, &y)| {
                let r = y - c - a * (-(t - t0) / tau).exp();
                r * r
            })
            .sum();
        (c, a, rss)
    };
    if times.len() < 3 || !(span > 0.0) {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        return ExpFit { tau: f64::INFINITY, n_inf: mean, amplitude: 0.0, rms_residual: 0.0 };
    }
    let lo = (span / times.len() as f64 / 10.0).ln();
    let hi = (span * 100.0).ln();
    let grid = 400;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=grid {
        let lt = lo + (hi - lo) * i as f64 / grid as f64;
        let rss = solve(lt.exp()).2;
        if rss < best.1 {
            best = (i, rss);
        }
    }
    let step = (hi - lo) / grid as f64;
    let (mut a, mut b) = (lo + step * (best.0 as f64 - 1.0), lo + step * (best.0 as f64 + 1.0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if solve(c.exp()).2 < solve(d.exp()).2 {
            b = d;
        } else {
            a = c;
        }
    }
    let tau = (0.5 * (a + b)).exp();
    let (n_inf, amplitude, rss) = solve(tau);
    ExpFit { tau, n_inf, amplitude, rms_residual: (rss / times.len() as f64).sqrt() }
}

/// Largest frequency relevant for the step-size bound: the top mode or ω_c.
fn max_frequency(set: &ModeSet, config: &ArrayConfig, axial: &AxializationParams) -> f64 {
    set.frequencies()
        .into_iter()
        .fold(config.omega_c(), f64::max)
        .max(axial.drive_frequency.abs())
}

struct Sampler<'a> {
    set: &'a ModeSet,
    mats: &'a SystemMatrices,
}

impl Sampler<'_> {
    fn occupations(&self, y: &DVector<f64>, out: &mut [f64]) {
        let d = self.mats.dim();
        let q = y.rows(0, d);
        let v = y.rows(d, d);
        let p: DVector<f64> = v.component_mul(&self.mats.masses) - &self.mats.w * q * 0.5;
        for (slot, m) in out.iter_mut().zip(&self.set.modes) {
            let mut a = Complex64::new(0.0, 0.0);
            for i in 0..d {
                a += m.alpha[i].conj() * p[i] + m.beta[i].conj() * q[i];
            }
            *slot = a.norm_sqr();
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Stochastic cooling run averaged over `opts.n_traj` trajectories.
///
/// Trajectory `i` draws from a ChaCha stream keyed by (seed, i), so results do not depend on
/// the thread count.
pub fn simulate_cooling(
    config: &ArrayConfig,
    positions: &[Vector3<f64>],
    mats: &SystemMatrices,
    set: &ModeSet,
    laser: &LaserParams,
    axial: &AxializationParams,
    opts: &CoolingOptions,
) -> Result<CoolingRecord, CoolingError> {
    if !(opts.t_end > 0.0) {
        return Err(invalid("t_end", "must be positive"));
    }
    if opts.n_traj == 0 {
        return Err(invalid("n_traj", "at least one trajectory required"));
    }
    if !(opts.sample_interval > 0.0) {
        return Err(invalid("sample_interval", "must be positive"));
    }
    if !(axial.fraction >= 0.0) {
        return Err(invalid("axialization", "amplitude must be non-negative"));
    }
    let n = config.n_ions();
    let d = mats.dim();
    if positions.len() != n || d != 3 * n || set.modes.len() != d {
        return Err(CoolingError::Modes(ModesError::DimensionMismatch { expected: 3 * n, got: set.modes.len() }));
    }
    let n_modes = set.modes.len();
    let initial: Vec<f64> = match &opts.initial {
        InitialQuanta::PerMode(v) if v.len() != n_modes => {
            return Err(invalid("initial_quanta", format!("expected {n_modes} values")));
        }
        InitialQuanta::PerMode(v) => v.clone(),
        InitialQuanta::Uniform { mean, .. } => vec![*mean; n_modes],
    };
    if initial.iter().any(|&x| !(x >= 0.0)) {
        return Err(invalid("initial_quanta", "must be non-negative"));
    }

    let omega_max = max_frequency(set, config, axial);
    let limit = 0.02 * 2.0 * PI / omega_max;
    let dt = match opts.dt {
        Some(dt) => dt,
        None => opts.sample_interval / (opts.sample_interval / limit).ceil(),
    };
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(CoolingError::StepSizeTooLarge { dt, limit });
    }
    if !laser.is_off() && 0.5 * laser.linewidth * dt > 1.0 {
        return Err(CoolingError::StepSizeTooLarge { dt, limit: 2.0 / laser.linewidth });
    }
    let steps_per_sample = (opts.sample_interval / dt).round().max(1.0) as usize;
    let n_samples = (opts.t_end / (dt * steps_per_sample as f64)).floor() as usize + 1;
    let times: Vec<f64> = (0..n_samples).map(|s| (s * steps_per_sample) as f64 * dt).collect();

    let half = LinearPropagator::new(mats, 0.5 * dt);
    let generator = first_order_matrix(mats);
    let frames: Vec<(Matrix3<f64>, Vector3<f64>)> = (0..n)
        .map(|j| {
            let (x, y, scale) = site_frame(&config.site_tensor(j));
            let g = 2.0 * config.species.charge * axial.fraction * scale;
            ((x * x.transpose() - y * y.transpose()) * g, config.sites[j].center)
        })
        .collect();
    let axial_accel = |t: f64, q: &[f64], out: &mut DVector<f64>| {
        if axial.fraction == 0.0 {
            return;
        }
        let c = (axial.drive_frequency * t).cos();
        for j in 0..n {
            let r = positions[j] + Vector3::new(q[j], q[n + j], q[2 * n + j]);
            let f = -(frames[j].0 * (r - frames[j].1)) * c;
            for a in 0..3 {
                out[a * n + j] = f[a] / mats.masses[a * n + j];
            }
        }
    };
    let k_hat = laser.k_vector.try_normalize(0.0).unwrap_or(Vector3::zeros());
    let recoil = HBAR * laser.k_vector.norm();
    let sampler = Sampler { set, mats };

    let run = |traj: usize| -> Result<Vec<f64>, CoolingError> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(traj as u64);
        let amps: Vec<Complex64> = initial
            .iter()
            .map(|&mean| {
                let nq = match &opts.initial {
                    InitialQuanta::Uniform { spread, .. } => mean * (1.0 + spread * (2.0 * rng.random::<f64>() - 1.0)),
                    InitialQuanta::PerMode(_) => mean,
                };
                let phase = 2.0 * PI * rng.random::<f64>();
                Complex64::from_polar(nq.max(0.0).sqrt(), phase)
            })
            .collect();
        let (q0, v0) = reconstruct_state(set, mats, &amps);
        let mut y = DVector::zeros(2 * d);
        y.rows_mut(0, d).copy_from(&q0);
        y.rows_mut(d, d).copy_from(&v0);
        let e_scale = amps.iter().zip(&set.modes).map(|(a, m)| HBAR * m.omega * (a.norm_sqr() + 1.0)).sum::<f64>();
        let mut out = vec![0.0; n_samples * n_modes];
        sampler.occupations(&y, &mut out[0..n_modes]);
        let mut accel = DVector::zeros(d);
        let mut step = 0usize;
        for s in 1..n_samples {
            for _ in 0..steps_per_sample {
                let t = step as f64 * dt;
                match opts.integrator {
                    Integrator::SplitExact => {
                        y = half.apply(&y);
                        if axial.fraction != 0.0 {
                            axial_accel(t + 0.5 * dt, y.as_slice(), &mut accel);
                            for i in 0..d {
                                y[d + i] += accel[i] * dt;
                            }
                        }
                        y = half.apply(&y);
                    }
                    Integrator::Rk4 => {
                        let f = |tt: f64, yy: &DVector<f64>| {
                            let mut dy = &generator * yy;
                            if axial.fraction != 0.0 {
                                let mut acc = DVector::zeros(d);
                                axial_accel(tt, yy.as_slice(), &mut acc);
                                for i in 0..d {
                                    dy[d + i] += acc[i];
                                }
                            }
                            dy
                        };
                        y = rk4_step(&f, t, &y, dt);
                    }
                }
                if !laser.is_off() {
                    for j in 0..n {
                        let v = Vector3::new(y[d + j], y[d + n + j], y[d + 2 * n + j]);
                        let p = scattering_rate(laser, &v) * dt;
                        if rng.random::<f64>() < p {
                            let m = mats.masses[j];
                            let kick = (k_hat + random_unit(&mut rng)) * (recoil / m);
                            for a in 0..3 {
                                y[d + a * n + j] += kick[a];
                            }
                        }
                    }
                }
                step += 1;
            }
            if y.iter().any(|x| !x.is_finite()) {
                return Err(CoolingError::UnstableIntegration { trajectory: traj, time: step as f64 * dt });
            }
            let slot = &mut out[s * n_modes..(s + 1) * n_modes];
            sampler.occupations(&y, slot);
            if laser.is_off() && axial.fraction == 0.0 {
                let e: f64 = slot.iter().zip(&set.modes).map(|(x, m)| HBAR * m.omega * x).sum();
                if e > 1e3 * e_scale {
                    return Err(CoolingError::UnstableIntegration { trajectory: traj, time: step as f64 * dt });
                }
            }
        }
        Ok(out)
    };

    let series: Vec<Result<Vec<f64>, CoolingError>> = (0..opts.n_traj).into_par_iter().map(run).collect();
    let mut sum = vec![0.0; n_samples * n_modes];
    let mut sum_sq = vec![0.0; n_samples * n_modes];
    for s in series {
        let s = s?;
        for (i, x) in s.iter().enumerate() {
            sum[i] += x;
            sum_sq[i] += x * x;
        }
    }
    let nt = opts.n_traj as f64;
    let mut occupation = vec![vec![0.0; n_samples]; n_modes];
    let mut std_error = vec![vec![0.0; n_samples]; n_modes];
    for s in 0..n_samples {
        for m in 0..n_modes {
            let mean = sum[s * n_modes + m] / nt;
            let var = if opts.n_traj > 1 {
                ((sum_sq[s * n_modes + m] / nt - mean * mean) * nt / (nt - 1.0)).max(0.0)
            } else {
                0.0
            };
            occupation[m][s] = mean;
            std_error[m][s] = (var / nt).sqrt();
        }
    }
    let tail = (n_samples / 10).max(1);
    let summary = (0..n_modes)
        .map(|m| {
            let series = &occupation[m];
            ModeCooling {
                mode_index: m,
                kind: set.modes[m].kind,
                n_initial: series[0],
                n_final: series[n_samples - tail..].iter().sum::<f64>() / tail as f64,
                fit: fit_exponential(&times, series),
            }
        })
        .collect();
    Ok(CoolingRecord {
        times,
        occupation,
        std_error,
        summary,
        n_traj: opts.n_traj,
        seed: opts.seed,
        dt,
        laser: *laser,
        axialization: *axial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, SolverOptions};
    use crate::model::{build_lattice, LatticeKind, LatticeSpec};
    use crate::modes::assemble_matrices;
    use std::collections::BTreeMap;

    fn laser() -> LaserParams {
        let be = IonSpecies::beryllium9();
        LaserParams::along(&be, Vector3::x(), -0.5 * be.natural_linewidth, 8.0).unwrap()
    }

    #[test]
    fn rate_formula() {
        let mut l = laser();
        l.detuning = 0.0;
        let g = l.linewidth;
        assert!((scattering_rate(&l, &Vector3::zeros()) - 0.5 * g * 8.0 / 9.0).abs() < 1e-6 * g);
        l.detuning = 3e7;
        let v = l.k_vector * (3e7 / l.k_vector.norm_squared());
        assert!((scattering_rate(&l, &v) - 0.5 * g * 8.0 / 9.0).abs() < 1e-6 * g);
        l.detuning = 0.0;
        l.saturation = 1e12;
        assert!((scattering_rate(&l, &Vector3::zeros()) / (0.5 * g) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn laser_validation() {
        assert!(LaserParams::new(Vector3::x(), 0.0, 1.0, 1.0, 313e-9).is_err());
        assert!(LaserParams::new(Vector3::x() * (2.0 * PI / 313e-9), 0.0, -1.0, 1.0, 313e-9).is_err());
    }

    fn one_site() -> (ArrayConfig, Vec<Vector3<f64>>) {
        let be = IonSpecies::beryllium9();
        let spec = LatticeSpec { kind: LatticeKind::Square, spacing: 30e-6, n_sites: 1, tilt: 0.3, centering: None };
        let cfg = build_lattice(&spec, &be, 2.5, None, 2.0 * PI * 2.1e6, BTreeMap::new()).unwrap();
        (cfg, vec![Vector3::zeros()])
    }

    #[test]
    fn axialization_force_properties() {
        let (cfg, _) = one_site();
        let ax = AxializationParams { fraction: 0.03, drive_frequency: 1e7 };
        assert_eq!(axialization_force(&ax, &cfg, 0, &Vector3::zeros(), 0.3), Vector3::zeros());
        assert_eq!(axialization_force(&AxializationParams::off(), &cfg, 0, &Vector3::new(1e-6, 0.0, 0.0), 0.0), Vector3::zeros());
        let (x, y, _) = site_frame(&cfg.site_tensor(0));
        let a = 1e-7;
        let fx = axialization_force(&ax, &cfg, 0, &(x * a), 0.0);
        let fy = axialization_force(&ax, &cfg, 0, &(y * a), 0.0);
        assert!((fx.dot(&x) + fy.dot(&y)).abs() < 1e-12 * fx.norm());
        let m = cfg.species.mass;
        let wz = 2.0 * PI * 2.1e6;
        assert!((fx.dot(&x) / (-0.03 * m * wz * wz * a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn drive_frequency_is_cyclotron_for_aligned_field() {
        let (cfg, _) = one_site();
        let w = axialization_frequency(&cfg, 0).unwrap();
        assert!((w / cfg.omega_c() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn free_evolution_conserves_occupations() {
        let (cfg, pos) = one_site();
        let mats = assemble_matrices(&cfg, &pos).unwrap();
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        let mut l = laser();
        l.saturation = 0.0;
        let opts = CoolingOptions { t_end: 2e-5, n_traj: 2, sample_interval: 1e-6, ..Default::default() };
        let rec = simulate_cooling(&cfg, &pos, &mats, &set, &l, &AxializationParams::off(), &opts).unwrap();
        for m in &rec.occupation {
            for x in m {
                assert!((x / m[0] - 1.0).abs() < 1e-9, "{x} {}", m[0]);
            }
        }
        assert!(!rec.cooling_detected());
    }

    #[test]
    fn oversized_step_rejected() {
        let (cfg, pos) = one_site();
        let mats = assemble_matrices(&cfg, &pos).unwrap();
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        let opts = CoolingOptions { t_end: 1e-6, n_traj: 1, dt: Some(1e-8), ..Default::default() };
        let r = simulate_cooling(&cfg, &pos, &mats, &set, &laser(), &AxializationParams::off(), &opts);
        assert!(matches!(r, Err(CoolingError::StepSizeTooLarge { .. })));
    }

    #[test]
    fn deterministic_per_seed() {
        let be = IonSpecies::beryllium9();
        let spec = LatticeSpec { kind: LatticeKind::Honeycomb, spacing: 15e-6, n_sites: 2, tilt: 20f64.to_radians(), centering: None };
        let cfg = build_lattice(&spec, &be, 2.5, None, 2.0 * PI * 2.1e6, BTreeMap::new()).unwrap();
        let eq = solve_equilibrium(&cfg, None, &SolverOptions::default()).unwrap();
        let mats = assemble_matrices(&cfg, &eq.positions).unwrap();
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        let ax = AxializationParams { fraction: 0.03, drive_frequency: axialization_frequency(&cfg, 0).unwrap() };
        let opts = CoolingOptions { t_end: 2e-5, n_traj: 3, seed: 9, sample_interval: 2e-6, ..Default::default() };
        let a = simulate_cooling(&cfg, &eq.positions, &mats, &set, &laser(), &ax, &opts).unwrap();
        let b = simulate_cooling(&cfg, &eq.positions, &mats, &set, &laser(), &ax, &opts).unwrap();
        assert_eq!(a.occupation, b.occupation);
        let c = simulate_cooling(&cfg, &eq.positions, &mats, &set, &laser(), &ax, &CoolingOptions { seed: 10, ..opts }).unwrap();
        assert_ne!(a.occupation, c.occupation);
    }

    #[test]
    fn exponential_fit_recovers_parameters() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 5e-6).collect();
        let y: Vec<f64> = t.iter().map(|&t| 12.0 + 9000.0 * (-t / 1.5e-4).exp()).collect();
        let f = fit_exponential(&t, &y);
        assert!((f.tau / 1.5e-4 - 1.0).abs() < 1e-6);
        assert!((f.n_inf - 12.0).abs() < 1e-3);
    }
}
