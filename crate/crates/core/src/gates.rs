//! Two-qubit geometric phase gates driven by a state-dependent force on a selected ion pair,
//! evaluated against every mode of the lattice.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{Matrix4, Vector3, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::equilibrium::{solve_equilibrium, SolverOptions};
use crate::model::ArrayConfig;
use crate::modes::{assemble_matrices, solve_modes, ModeKind, ModeOptions, ModeSet, ModesError};

type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("beatnote within {guard:.3e} rad/s of modes {modes:?}")]
    ResonantDrive { modes: Vec<usize>, guard: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("could not identify the local {0} modes of the pair")]
    MissingLocalModes(&'static str),
    #[error("pair tuning did not bracket the target ratio {target} (ratio {low} .. {high})")]
    TuningFailed { target: f64, low: f64, high: f64 },
    #[error(transparent)]
    Modes(#[from] ModesError),
}

/// Spin branches in the order 00, 01, 10, 11; entry j is σ^z of ion j (state 0 ↦ +1).
pub const BRANCH_SIGNS: [[f64; 2]; 4] = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
pub const BRANCH_LABELS: [&str; 4] = ["00", "01", "10", "11"];

#[derive(Debug, Clone, PartialEq)]
pub struct GateDrive {
    pub pair: (usize, usize),
    /// Force energy scale E_O, J.
    pub e_o: f64,
    pub mu_r: f64,
    pub k_r: Vector3<f64>,
    /// Pulse length, s.
    pub duration: f64,
    /// Force phase at each ion of the pair; equal phases use the closed-form kernels.
    pub phases: [f64; 2],
    /// Minimum |μ_R − ω_λ|, rad/s.
    pub resonance_guard: f64,
}

impl GateDrive {
    pub fn new(pair: (usize, usize), e_o: f64, mu_r: f64, k_r: Vector3<f64>, duration: f64) -> Self {
        Self {
            pair,
            e_o,
            mu_r,
            k_r,
            duration,
            phases: [0.0, 0.0],
            resonance_guard: 2.0 * std::f64::consts::PI * 10.0,
        }
    }

    fn validate(&self, n_ions: usize) -> Result<(), GateError> {
        let (a, b) = self.pair;
        if a == b {
            return Err(GateError::InvalidParameter { name: "pair", reason: "ions must be distinct".into() });
        }
        if a >= n_ions || b >= n_ions {
            return Err(GateError::InvalidParameter { name: "pair", reason: format!("index out of range for {n_ions} ions") });
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(GateError::InvalidParameter { name: "duration", reason: "must be non-negative".into() });
        }
        if !self.e_o.is_finite() || !(self.mu_r > 0.0) {
            return Err(GateError::InvalidParameter { name: "odf", reason: "E_O finite and μ_R positive required".into() });
        }
        Ok(())
    }
}

/// sin(x)/x
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// (x − sin x)/x³
fn sin_remainder(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        1.0 / 6.0 - x2 / 120.0 + x2 * x2 / 5040.0
    } else {
        (x - x.sin()) / (x * x * x)
    }
}

/// F(μ, ω, t) = −e^{−i(μ−ω)t/2} sin((μ−ω)t/2)/(μ−ω) + e^{i(μ+ω)t/2} sin((μ+ω)t/2)/(μ+ω),
/// equal to i∫₀ᵗ e^{iωt′} sin(μt′) dt′.
pub fn f_func(mu: f64, omega: f64, t: f64) -> C64 {
    let m = mu - omega;
    let p = mu + omega;
    let term = |a: f64| C64::from_polar(0.5 * t * sinc(0.5 * a * t), 0.5 * a * t);
    term(p) - term(-m)
}

/// G(μ, ω, t) = 2tω/(μ²−ω²) + 2μ sin((μ+ω)t)/((μ+ω)(μ²−ω²)) − 2μ sin((μ−ω)t)/((μ−ω)(μ²−ω²))
/// − ω sin(2μt)/(μ(μ²−ω²)), evaluated for ω ≥ 0 in a regrouped form without the 1/(μ−ω)²
/// cancellation and continued by oddness in ω.
pub fn g_func(mu: f64, omega: f64, t: f64) -> f64 {
    if omega < 0.0 {
        return -g_func(mu, -omega, t);
    }
    if t == 0.0 || omega == 0.0 {
        return 0.0;
    }
    let m = mu - omega;
    let p = mu + omega;
    if (m * t).abs() < 1e-6 {
        return g_near_resonance(mu, -m, t);
    }
    // 2tω/(mp) − 2μ sin(mt)/(m²p) = −2t/p + 2μ m t³ S(mt)/p, with S(x) = (x − sin x)/x³.
    let smooth = -2.0 * t / p + 2.0 * mu * m * t.powi(3) * sin_remainder(m * t) / p;
    // The remaining 1/m terms, with sin(pt) = sin(2μt − mt) expanded so the division is exact.
    let (s2, c2) = (2.0 * mu * t).sin_cos();
    let half = sinc(0.5 * m * t);
    let rest = s2 * (3.0 * mu - m - mu * mu * m * t * t * half * half) / (mu * p * p)
        - 2.0 * mu * t * c2 * sinc(m * t) / (p * p);
    smooth + rest
}

/// First-order expansion of G about ω = μ, with ω = μ + ε.
fn g_near_resonance(mu: f64, eps: f64, t: f64) -> f64 {
    let (s2, c2) = (2.0 * mu * t).sin_cos();
    let mt = mu * t;
    let g0 = (-2.0 * mt * (c2 + 2.0) + 3.0 * s2) / (4.0 * mu * mu);
    let g1 = (-mt.powi(3) / 6.0 + mt * mt * s2 / 4.0 + mt * (c2 + 1.0) / 2.0 - s2 / 2.0) / mu.powi(3);
    g0 + eps * g1
}

/// Force projections k·α_j of one mode at the two ions, with the signed mode frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCoupling {
    pub signed_omega: f64,
    pub u: [C64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateTrajectory {
    pub time: f64,
    /// p_{λ,E} = Σ_ν k^ν(±α_{λ1ν} ± α_{λ2ν}), index [λ][E].
    pub p: Vec<[C64; 4]>,
    /// Coherent displacement of mode λ in branch E.
    pub chi: Vec<[C64; 4]>,
    /// Accumulated phase of mode λ in branch E, rad.
    pub phi: Vec<[f64; 4]>,
    pub fidelity: f64,
}

impl GateTrajectory {
    /// Σ_λ Φ_{λ,E} per branch.
    pub fn branch_phases(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for row in &self.phi {
            for e in 0..4 {
                out[e] += row[e];
            }
        }
        out
    }

    /// Φ_00 + Φ_11 − Φ_01 − Φ_10.
    pub fn entangling_phase(&self) -> f64 {
        let b = self.branch_phases();
        b[0] + b[3] - b[1] - b[2]
    }

    pub fn max_residual_chi(&self) -> f64 {
        self.chi.iter().flat_map(|r| r.iter().map(|c| c.norm())).fold(0.0, f64::max)
    }
}

/// Force projections of every mode of `set` at the two gate ions.
pub fn mode_couplings(set: &ModeSet, pair: (usize, usize), k_r: &Vector3<f64>) -> Vec<ModeCoupling> {
    let n = set.n_ions;
    set.modes
        .iter()
        .map(|m| ModeCoupling {
            signed_omega: m.signed_omega,
            u: [m.k_dot_alpha(n, pair.0, k_r), m.k_dot_alpha(n, pair.1, k_r)],
        })
        .collect()
}

fn check_resonance(set: &ModeSet, drive: &GateDrive) -> Result<(), GateError> {
    let modes: Vec<usize> = set
        .modes
        .iter()
        .enumerate()
        .filter(|(_, m)| (drive.mu_r - m.omega).abs() <= drive.resonance_guard)
        .map(|(i, _)| i)
        .collect();
    if modes.is_empty() {
        Ok(())
    } else {
        Err(GateError::ResonantDrive { modes, guard: drive.resonance_guard })
    }
}

/// χ and Φ for every mode and branch at time `drive.duration`.
pub fn gate_trajectory(set: &ModeSet, drive: &GateDrive) -> Result<GateTrajectory, GateError> {
    drive.validate(set.n_ions)?;
    check_resonance(set, drive)?;
    let couplings = mode_couplings(set, drive.pair, &drive.k_r);
    Ok(trajectory_from_couplings(&couplings, drive.e_o, drive.mu_r, drive.phases, drive.duration))
}

/// Gate evolution for an explicit list of modes; the lattice path and the few-mode oracles share it.
pub fn trajectory_from_couplings(couplings: &[ModeCoupling], e_o: f64, mu: f64, phases: [f64; 2], t: f64) -> GateTrajectory {
    let equal = phases[0] == 0.0 && phases[1] == 0.0;
    let quad = if equal { None } else { Some(GaussLegendre::new(NonZeroUsize::new(12).unwrap())) };
    let rows: Vec<([C64; 4], [C64; 4], [f64; 4])> = couplings
        .par_iter()
        .map(|c| {
            let mut p = [C64::new(0.0, 0.0); 4];
            let mut chi = p;
            let mut phi = [0.0; 4];
            let (f, g) = if equal { (f_func(mu, c.signed_omega, t), g_func(mu, c.signed_omega, t)) } else { Default::default() };
            for (e, s) in BRANCH_SIGNS.iter().enumerate() {
                p[e] = c.u[0] * s[0] + c.u[1] * s[1];
                if equal {
                    chi[e] = C64::new(0.0, -e_o) * p[e].conj() * f;
                    phi[e] = -0.25 * e_o * e_o * p[e].norm_sqr() * g;
                } else {
                    let (x, ph) = general_phase_branch(quad.as_ref().unwrap(), c, s, phases, e_o, mu, t);
                    chi[e] = x;
                    phi[e] = ph;
                }
            }
            (p, chi, phi)
        })
        .collect();
    let mut traj = GateTrajectory {
        time: t,
        p: rows.iter().map(|r| r.0).collect(),
        chi: rows.iter().map(|r| r.1).collect(),
        phi: rows.iter().map(|r| r.2).collect(),
        fidelity: 0.0,
    };
    traj.fidelity = bell_fidelity(&traj);
    traj
}

/// ∫₀ᵗ e^{iat′} dt′
fn exp_integral(a: f64, t: f64) -> C64 {
    C64::from_polar(t * sinc(0.5 * a * t), 0.5 * a * t)
}

/// Arbitrary force phases: with h(s) = e^{iωs} Σ_j s_j u_j* sin(μs − φ_j) and C(s) = ∫₀ˢ h,
/// χ = E_O·C(t) and Φ = E_O² ∫₀ᵗ Im(h C*) ds. Reduces to the F/G forms when φ_j = 0.
fn general_phase_branch(
    quad: &GaussLegendre,
    c: &ModeCoupling,
    s: &[f64; 2],
    phases: [f64; 2],
    e_o: f64,
    mu: f64,
    t: f64,
) -> (C64, f64) {
    let w = c.signed_omega;
    // sin(μs − φ) = (e^{i(μs−φ)} − e^{−i(μs−φ)})/2i
    let plus: C64 = (0..2).map(|j| c.u[j].conj() * s[j] * C64::from_polar(1.0, -phases[j])).sum::<C64>() / C64::new(0.0, 2.0);
    let minus: C64 = -(0..2).map(|j| c.u[j].conj() * s[j] * C64::from_polar(1.0, phases[j])).sum::<C64>() / C64::new(0.0, 2.0);
    let (a1, a2) = (w + mu, w - mu);
    let h = |x: f64| plus * C64::from_polar(1.0, a1 * x) + minus * C64::from_polar(1.0, a2 * x);
    let cum = |x: f64| plus * exp_integral(a1, x) + minus * exp_integral(a2, x);
    if t == 0.0 {
        return (C64::new(0.0, 0.0), 0.0);
    }
    let panels = ((t * (a1.abs().max(a2.abs())) / std::f64::consts::PI).ceil() as usize).max(1) + 1;
    let width = t / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let lo = k as f64 * width;
        acc += quad.integrate(lo, lo + width, |x| (h(x) * cum(x).conj()).im);
    }
    (cum(t) * e_o, e_o * e_o * acc)
}

/// Two-qubit rotation exp(−iθσ_y/2) on both ions, basis 00, 01, 10, 11.
fn ry_pair(theta: f64) -> Matrix4<f64> {
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    let r = nalgebra::Matrix2::new(c, -s, s, c);
    r.kronecker(&r)
}

/// 4×4 spin density matrix after tracing the modes:
/// ρ_EE′ = ¼ e^{i(Φ_E − Φ_E′)} Π_λ exp(−|χ_E|²/2 − |χ_E′|²/2 + χ_E′*χ_E).
pub fn spin_density_matrix(traj: &GateTrajectory) -> Matrix4<C64> {
    let total = traj.branch_phases();
    Matrix4::from_fn(|e, f| {
        let mut log = C64::new(0.0, total[e] - total[f]);
        for row in &traj.chi {
            let (x, y) = (row[e], row[f]);
            log += -0.5 * x.norm_sqr() - 0.5 * y.norm_sqr() + y.conj() * x;
        }
        0.25 * log.exp()
    })
}

/// ⟨ψ_B|UρU†|ψ_B⟩ with ψ_B = (|00⟩ − i|11⟩)/√2 and U the closing π/2 pulses R_y(−π/2)⊗R_y(−π/2).
pub fn bell_fidelity(traj: &GateTrajectory) -> f64 {
    let rho = spin_density_matrix(traj);
    let u = ry_pair(-0.5 * std::f64::consts::PI).map(|x| C64::new(x, 0.0));
    let out = u * rho * u.adjoint();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let psi = Vector4::new(C64::new(r, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, -r));
    let f = (psi.adjoint() * out * psi)[(0, 0)].re;
    f.clamp(0.0, 1.0)
}

/// The four local modes of the gate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMode {
    pub index: usize,
    /// ω_λ − reference, rad/s.
    pub detuning: f64,
    /// ρ₀ = ħc_λ, m.
    pub zero_point: f64,
    /// Share of |γ|² on the two pair ions.
    pub pair_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairModes {
    pub stretch_plus: LocalMode,
    pub stretch_minus: LocalMode,
    pub com_plus: LocalMode,
    pub com_minus: LocalMode,
}

impl PairModes {
    /// Δ_{c,+}/Δ_{s,+}
    pub fn ratio(&self) -> f64 {
        self.com_plus.detuning / self.stretch_plus.detuning
    }
}

fn local_pair(set: &ModeSet, pair: (usize, usize), kind: ModeKind, reference: f64) -> Result<(LocalMode, LocalMode), GateError> {
    let n = set.n_ions;
    let mut scored: Vec<(usize, f64, f64)> = set
        .of_kind(kind)
        .map(|(i, m)| {
            let mut w = 0.0;
            let mut overlap = C64::new(0.0, 0.0);
            for a in 0..3 {
                let g1 = m.eigvec[a * n + pair.0];
                let g2 = m.eigvec[a * n + pair.1];
                w += g1.norm_sqr() + g2.norm_sqr();
                overlap += g1.conj() * g2;
            }
            (i, w, overlap.re)
        })
        .collect();
    if scored.len() < 2 {
        return Err(GateError::MissingLocalModes(kind.label()));
    }
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    let make = |s: &(usize, f64, f64)| LocalMode {
        index: s.0,
        detuning: set.modes[s.0].omega - reference,
        zero_point: set.modes[s.0].spread,
        pair_weight: s.1,
    };
    let (a, b) = (&scored[0], &scored[1]);
    if (a.2 < 0.0) == (b.2 < 0.0) {
        return Err(GateError::MissingLocalModes(kind.label()));
    }
    let (stretch, com) = if a.2 < 0.0 { (a, b) } else { (b, a) };
    Ok((make(stretch), make(com)))
}

/// Identify the pair's local stretch and COM modes in the cyclotron (+) and magnetron (−)
/// branches and report their detunings from `reference`.
pub fn pair_modes(set: &ModeSet, pair: (usize, usize), reference: f64) -> Result<PairModes, GateError> {
    let (stretch_plus, com_plus) = local_pair(set, pair, ModeKind::Cyclotron, reference)?;
    let (stretch_minus, com_minus) = local_pair(set, pair, ModeKind::Magnetron, reference)?;
    Ok(PairModes { stretch_plus, stretch_minus, com_plus, com_minus })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    /// Grid value: time in s or beatnote in rad/s.
    pub x: f64,
    pub fidelity: f64,
    pub max_residual_chi: f64,
    /// Φ_00 + Φ_11 summed over modes, rad.
    pub phase_00_11: f64,
    pub entangling_phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanGrid {
    Time(Vec<f64>),
    Beatnote(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateScan {
    pub rows: Vec<ScanRow>,
    pub pair_modes: Option<PairModes>,
}

impl GateScan {
    pub fn best(&self) -> Option<&ScanRow> {
        self.rows.iter().max_by(|a, b| a.fidelity.total_cmp(&b.fidelity))
    }
}

/// Fidelity table over a time or beatnote grid. Local-mode detunings are reported relative to
/// `reference` (normally ω_c/2) when they can be identified.
pub fn scan_gate(set: &ModeSet, drive: &GateDrive, grid: &ScanGrid, reference: f64) -> Result<GateScan, GateError> {
    let values = match grid {
        ScanGrid::Time(v) | ScanGrid::Beatnote(v) => v,
    };
    if values.is_empty() {
        return Err(GateError::InvalidParameter { name: "grid", reason: "empty".into() });
    }
    let mut rows = Vec::with_capacity(values.len());
    for &x in values {
        let mut d = drive.clone();
        match grid {
            ScanGrid::Time(_) => d.duration = x,
            ScanGrid::Beatnote(_) => d.mu_r = x,
        }
        let traj = gate_trajectory(set, &d)?;
        let b = traj.branch_phases();
        rows.push(ScanRow {
            x,
            fidelity: traj.fidelity,
            max_residual_chi: traj.max_residual_chi(),
            phase_00_11: b[0] + b[3],
            entangling_phase: traj.entangling_phase(),
        });
    }
    Ok(GateScan { rows, pair_modes: pair_modes(set, drive.pair, reference).ok() })
}

/// Modes of `base` with the axial frequency of both pair sites raised by `shift` (rad/s).
pub fn pair_shifted_modes(base: &ArrayConfig, pair: (usize, usize), omega_z: f64, shift: f64) -> Result<ModeSet, GateError> {
    let mut cfg = base.clone();
    let scale = ((omega_z + shift) / omega_z).powi(2);
    for j in [pair.0, pair.1] {
        let prev = base.curvature_scale(j);
        cfg.site_overrides.insert(j, prev * scale);
    }
    let eq = solve_equilibrium(&cfg, None, &SolverOptions::default()).map_err(ModesError::from)?;
    let mats = assemble_matrices(&cfg, &eq.positions)?;
    Ok(solve_modes(&mats, &ModeOptions::default())?)
}

/// Axial-frequency offset of the pair sites that sets Δ_{c,+}/Δ_{s,+} to `target`, found by
/// bisection on [lo, hi] (rad/s). Returns the offset and the resulting local modes.
pub fn tune_pair_ratio(
    base: &ArrayConfig,
    pair: (usize, usize),
    omega_z: f64,
    target: f64,
    bracket: (f64, f64),
    tolerance: f64,
) -> Result<(f64, PairModes), GateError> {
    let reference = 0.5 * base.omega_c();
    let eval = |shift: f64| -> Result<PairModes, GateError> {
        let set = pair_shifted_modes(base, pair, omega_z, shift)?;
        pair_modes(&set, pair, reference)
    };
    let (mut lo, mut hi) = bracket;
    let mut f_lo = eval(lo)?.ratio() - target;
    let f_hi = eval(hi)?.ratio() - target;
    if f_lo.signum() == f_hi.signum() {
        return Err(GateError::TuningFailed { target, low: f_lo + target, high: f_hi + target });
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        let f_mid = eval(mid)?.ratio() - target;
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    Ok((shift, eval(shift)?))
}
