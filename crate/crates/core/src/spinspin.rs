//! Effective Ising couplings from an optical dipole force acting on the normal modes.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::constants::HBAR;
use crate::modes::{ModeKind, ModeSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinSpinError {
    #[error("beatnote within {guard:.3e} rad/s of modes {modes:?}")]
    ResonantDrive { modes: Vec<usize>, guard: f64 },
    #[error("power-law fit needs at least 5 distinct separations, found {0}")]
    InsufficientPairs(usize),
    #[error("expected {expected} ions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForcePhases {
    /// All ions at the same phase of the force.
    Equal,
    /// φ_j = k_R·R_j0 from equilibrium positions.
    FromPositions(Vec<Vector3<f64>>),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdfParams {
    /// Force energy scale E_O, J.
    pub e_o: f64,
    /// Beatnote μ_R, rad/s.
    pub mu_r: f64,
    /// Difference wavevector, rad/m.
    pub k_r: Vector3<f64>,
    pub phases: ForcePhases,
    /// Minimum |μ_R − ω_λ|, rad/s.
    pub resonance_guard: f64,
}

impl OdfParams {
    pub fn new(e_o: f64, mu_r: f64, k_r: Vector3<f64>) -> Self {
        Self {
            e_o,
            mu_r,
            k_r,
            phases: ForcePhases::Equal,
            resonance_guard: 2.0 * std::f64::consts::PI * 10.0,
        }
    }

    fn phase_vector(&self, n: usize) -> Result<Vec<f64>, SpinSpinError> {
        match &self.phases {
            ForcePhases::Equal => Ok(vec![0.0; n]),
            ForcePhases::FromPositions(p) if p.len() == n => Ok(p.iter().map(|r| self.k_r.dot(r)).collect()),
            ForcePhases::Explicit(v) if v.len() == n => Ok(v.clone()),
            ForcePhases::FromPositions(p) => Err(SpinSpinError::DimensionMismatch { expected: n, got: p.len() }),
            ForcePhases::Explicit(v) => Err(SpinSpinError::DimensionMismatch { expected: n, got: v.len() }),
        }
    }
}

/// η_λj = k_R·ρ_λ0·γ_λj, as a (3N modes) × (N ions) table.
pub fn lamb_dicke(set: &ModeSet, k_r: &Vector3<f64>) -> DMatrix<Complex64> {
    let n = set.n_ions;
    DMatrix::from_fn(set.modes.len(), n, |l, j| {
        let m = &set.modes[l];
        let g: Complex64 = (0..3).map(|a| m.eigvec[a * n + j] * k_r[a]).sum();
        g * m.spread
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    /// J_jj′/ħ, rad/s, zero diagonal.
    pub j: DMatrix<f64>,
    pub odf: OdfParams,
}

impl CouplingMatrix {
    pub fn n_ions(&self) -> usize {
        self.j.nrows()
    }

    /// Off-diagonal entries j < j′.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_ions();
        let mut out = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for a in 0..n {
            for b in (a + 1)..n {
                out.push((a, b, self.j[(a, b)]));
            }
        }
        out
    }
}

/// J_jj′ = (ħE_O²/2) Σ_λ [X ω_λ cos(φ_j − φ_j′) − Y μ_R sin(φ_j − φ_j′)] / (μ_R² − ω_λ²),
/// X + iY = (k·α_λj)*(k·α_λj′), with the signed mode frequency; returned in rad/s.
/// Modes are summed in ascending index order for every entry.
pub fn coupling_matrix(set: &ModeSet, odf: &OdfParams) -> Result<CouplingMatrix, SpinSpinError> {
    let n = set.n_ions;
    let offending: Vec<usize> = set
        .modes
        .iter()
        .enumerate()
        .filter(|(_, m)| (odf.mu_r - m.omega).abs() <= odf.resonance_guard)
        .map(|(i, _)| i)
        .collect();
    if !offending.is_empty() {
        return Err(SpinSpinError::ResonantDrive { modes: offending, guard: odf.resonance_guard });
    }
    let phases = odf.phase_vector(n)?;
    let u: Vec<Vec<Complex64>> = set.modes.iter().map(|m| (0..n).map(|j| m.k_dot_alpha(n, j, &odf.k_r)).collect()).collect();
    let mu = odf.mu_r;
    let weights: Vec<(f64, f64)> = set
        .modes
        .iter()
        .map(|m| {
            let den = mu * mu - m.omega * m.omega;
            (m.signed_omega / den, mu / den)
        })
        .collect();
    let pref = 0.5 * odf.e_o * odf.e_o;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut row = vec![0.0; n];
            for b in (a + 1)..n {
                let dphi = phases[a] - phases[b];
                let (c, s) = (dphi.cos(), dphi.sin());
                let mut acc = 0.0;
                for (l, ul) in u.iter().enumerate() {
                    let z = ul[a].conj() * ul[b];
                    acc += z.re * weights[l].0 * c - z.im * weights[l].1 * s;
                }
                row[b] = pref * acc;
            }
            row
        })
        .collect();
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            j[(a, b)] = rows[a][b];
            j[(b, a)] = rows[a][b];
        }
    }
    Ok(CouplingMatrix { j, odf: odf.clone() })
}

/// Energy-form coupling via Lamb-Dicke parameters for equal phases:
/// J⁰/ħ = (E_O²/2ħ²) Σ_λ ω_λ/(μ_R² − ω_λ²)·Re(η*_λj η_λj′).
pub fn coupling_from_lamb_dicke(set: &ModeSet, eta: &DMatrix<Complex64>, e_o: f64, mu_r: f64) -> DMatrix<f64> {
    let n = set.n_ions;
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let mut acc = 0.0;
            for (l, m) in set.modes.iter().enumerate() {
                acc += m.signed_omega / (mu_r * mu_r - m.omega * m.omega) * (eta[(l, a)].conj() * eta[(l, b)]).re;
            }
            j[(a, b)] = 0.5 * e_o * e_o * acc / (HBAR * HBAR);
        }
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeFit {
    pub exponent: f64,
    /// RMS residual of log|J̄| about the fitted line.
    pub residual: f64,
    pub fit_range: (f64, f64),
    pub n_separations: usize,
}

/// Distinct separations (relative tolerance 1e-6) with the mean |J| of each.
pub fn separation_bins(coupling: &CouplingMatrix, positions: &[Vector3<f64>]) -> Vec<(f64, f64, usize)> {
    let mut pairs: Vec<(f64, f64)> = coupling
        .pairs()
        .into_iter()
        .map(|(a, b, v)| ((positions[a] - positions[b]).norm(), v.abs()))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut bins: Vec<(f64, f64, usize)> = Vec::new();
    for (r, v) in pairs {
        match bins.last_mut() {
            Some(last) if (r - last.0 / last.2 as f64).abs() <= 1e-6 * r => {
                last.0 += r;
                last.1 += v;
                last.2 += 1;
            }
            _ => bins.push((r, v, 1)),
        }
    }
    bins.into_iter().map(|(r, v, c)| (r / c as f64, v / c as f64, c)).collect()
}

/// Least-squares slope of log|J̄(R)| against log R; a = −slope. The default range runs from the
/// nearest separation to half the array diameter.
pub fn fit_power_law(
    coupling: &CouplingMatrix,
    positions: &[Vector3<f64>],
    fit_range: Option<(f64, f64)>,
) -> Result<RangeFit, SpinSpinError> {
    let n = coupling.n_ions();
    if positions.len() != n {
        return Err(SpinSpinError::DimensionMismatch { expected: n, got: positions.len() });
    }
    let bins = separation_bins(coupling, positions);
    let range = fit_range.unwrap_or_else(|| {
        let diameter = bins.last().map(|b| b.0).unwrap_or(0.0);
        let r_min = bins.first().map(|b| b.0).unwrap_or(0.0);
        (r_min, 0.5 * diameter)
    });
    let pts: Vec<(f64, f64)> = bins
        .iter()
        .filter(|b| b.0 >= range.0 * (1.0 - 1e-9) && b.0 <= range.1 * (1.0 + 1e-9) && b.1 > 0.0)
        .map(|b| (b.0.ln(), b.1.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(SpinSpinError::InsufficientPairs(pts.len()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    Ok(RangeFit {
        exponent: -slope,
        residual: (rss / k).sqrt(),
        fit_range: range,
        n_separations: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Fixed-width histogram of the signed couplings over pairs j < j′.
pub fn coupling_histogram(coupling: &CouplingMatrix, bins: usize) -> Vec<HistogramBin> {
    let values: Vec<f64> = coupling.pairs().into_iter().map(|p| p.2).collect();
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![HistogramBin { left: lo, right: hi, count: values.len() }];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: lo + width * i as f64,
            right: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandPosition {
    Top,
    Bottom,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandEdge {
    pub com_index: usize,
    pub position: BandPosition,
    /// |Σ_j γ_j|² of the COM mode.
    pub participation: f64,
}

impl BandEdge {
    pub fn is_edge(&self) -> bool {
        self.position != BandPosition::Interior
    }
}

/// Locate the centre-of-mass mode (largest |Σ_j γ_j|) of a branch and report whether it sits at
/// the branch extremum.
pub fn com_band_edge_check(set: &ModeSet, branch: ModeKind) -> Option<BandEdge> {
    let n = set.n_ions;
    let members: Vec<(usize, f64, f64)> = set
        .of_kind(branch)
        .map(|(i, m)| {
            let s: f64 = (0..3)
                .map(|a| (0..n).map(|j| m.eigvec[a * n + j]).sum::<Complex64>().norm_sqr())
                .sum();
            (i, m.omega, s)
        })
        .collect();
    let com = members.iter().copied().max_by(|x, y| x.2.total_cmp(&y.2))?;
    let top = members.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let bottom = members.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let position = if com.1 == top {
        BandPosition::Top
    } else if com.1 == bottom {
        BandPosition::Bottom
    } else {
        BandPosition::Interior
    };
    Some(BandEdge { com_index: com.0, position, participation: com.2 })
}
