//! Stationary points of the static potential (trap quadrupoles plus Coulomb repulsion).
//!
//! Penning equilibria are saddle points: the radial directions are electrostatically
//! anti-confining, so the solver finds roots of the gradient instead of minimizing.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::model::constants::K_E;
use crate::model::ArrayConfig;

pub type Configuration3N = Vec<Vector3<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("ions {0} and {1} coincide")]
    CoincidentIons(usize, usize),
    #[error("expected {expected} positions, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("equilibrium solve did not converge after {iterations} iterations (max force {residual:.3e} N)")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("ions {0} and {1} collapsed below 0.1 of the minimum site spacing")]
    CollapseDetected(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub positions: Configuration3N,
    /// Largest per-ion force magnitude at the solution, N.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Absolute per-ion force tolerance, N. `None` uses `relative_tolerance` times the
    /// nearest-neighbor Coulomb force.
    pub tolerance: Option<f64>,
    pub relative_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: None,
            relative_tolerance: 1e-12,
            max_iterations: 200,
        }
    }
}

fn check_len(config: &ArrayConfig, pos: &[Vector3<f64>]) -> Result<(), EquilibriumError> {
    if pos.len() != config.n_ions() {
        return Err(EquilibriumError::WrongLength {
            expected: config.n_ions(),
            got: pos.len(),
        });
    }
    Ok(())
}

fn separation(pos: &[Vector3<f64>], j: usize, k: usize) -> Result<(Vector3<f64>, f64), EquilibriumError> {
    let r = pos[j] - pos[k];
    let d = r.norm();
    if !(d > 0.0) {
        return Err(EquilibriumError::CoincidentIons(j, k));
    }
    Ok((r, d))
}

/// U = Σ_j e·r̄ᵀQ_j r̄ + Σ_{j<k} k_e e²/|R_jk|, J.
pub fn total_potential(config: &ArrayConfig, pos: &[Vector3<f64>]) -> Result<f64, EquilibriumError> {
    check_len(config, pos)?;
    let e = config.species.charge;
    let mut trap = 0.0;
    for (j, site) in config.sites.iter().enumerate() {
        let rb = pos[j] - site.center;
        trap += e * (rb.transpose() * config.site_tensor(j) * rb)[0];
    }
    let mut coulomb = 0.0;
    for j in 0..pos.len() {
        for k in (j + 1)..pos.len() {
            let (_, d) = separation(pos, j, k)?;
            coulomb += K_E * e * e / d;
        }
    }
    Ok(trap + coulomb)
}

/// ∂U/∂R_j for every ion, N.
pub fn potential_gradient(config: &ArrayConfig, pos: &[Vector3<f64>]) -> Result<Configuration3N, EquilibriumError> {
    check_len(config, pos)?;
    let e = config.species.charge;
    let mut grad: Configuration3N = config
        .sites
        .iter()
        .enumerate()
        .map(|(j, site)| config.site_tensor(j) * (pos[j] - site.center) * (2.0 * e))
        .collect();
    for j in 0..pos.len() {
        for k in (j + 1)..pos.len() {
            let (r, d) = separation(pos, j, k)?;
            let f = r * (K_E * e * e / (d * d * d));
            grad[j] -= f;
            grad[k] += f;
        }
    }
    Ok(grad)
}

/// Coulomb-only part of the gradient.
pub fn coulomb_gradient(config: &ArrayConfig, pos: &[Vector3<f64>]) -> Result<Configuration3N, EquilibriumError> {
    check_len(config, pos)?;
    let e = config.species.charge;
    let mut grad = vec![Vector3::zeros(); pos.len()];
    for j in 0..pos.len() {
        for k in (j + 1)..pos.len() {
            let (r, d) = separation(pos, j, k)?;
            let f = r * (K_E * e * e / (d * d * d));
            grad[j] -= f;
            grad[k] += f;
        }
    }
    Ok(grad)
}

fn add_block(h: &mut DMatrix<f64>, n: usize, j: usize, k: usize, block: &Matrix3<f64>, sign: f64) {
    for mu in 0..3 {
        for nu in 0..3 {
            h[(mu * n + j, nu * n + k)] += sign * block[(mu, nu)];
        }
    }
}

/// Φ = V + K in coordinate order [x₁..x_N, y₁..y_N, z₁..z_N], N/m.
pub fn potential_hessian(config: &ArrayConfig, pos: &[Vector3<f64>]) -> Result<DMatrix<f64>, EquilibriumError> {
    check_len(config, pos)?;
    let n = pos.len();
    let e = config.species.charge;
    let mut h = DMatrix::zeros(3 * n, 3 * n);
    for j in 0..n {
        add_block(&mut h, n, j, j, &(config.site_tensor(j) * (2.0 * e)), 1.0);
    }
    for j in 0..n {
        for k in (j + 1)..n {
            let (r, d) = separation(pos, j, k)?;
            let t = (r * r.transpose() * 3.0 - Matrix3::identity() * (d * d)) * (K_E * e * e / d.powi(5));
            add_block(&mut h, n, j, j, &t, 1.0);
            add_block(&mut h, n, k, k, &t, 1.0);
            add_block(&mut h, n, j, k, &t, -1.0);
            add_block(&mut h, n, k, j, &t, -1.0);
        }
    }
    Ok(h)
}

fn flatten(g: &[Vector3<f64>]) -> DVector<f64> {
    let n = g.len();
    DVector::from_fn(3 * n, |i, _| g[i % n][i / n])
}

fn max_force(g: &[Vector3<f64>]) -> f64 {
    g.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn check_collapse(config: &ArrayConfig, pos: &[Vector3<f64>]) -> Result<(), EquilibriumError> {
    let Some(spacing) = config.min_site_spacing() else {
        return Ok(());
    };
    for j in 0..pos.len() {
        for k in (j + 1)..pos.len() {
            if (pos[j] - pos[k]).norm() < 0.1 * spacing {
                return Err(EquilibriumError::CollapseDetected(j, k));
            }
        }
    }
    Ok(())
}

/// Newton step with spectral regularization when the Hessian is near singular.
fn newton_step(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let floor = lmax * 1e-12;
    let coeffs = eig.eigenvectors.transpose() * g;
    let scaled = DVector::from_fn(coeffs.len(), |i, _| {
        let l = eig.eigenvalues[i];
        let l = if l.abs() < floor { floor.copysign(if l == 0.0 { 1.0 } else { l }) } else { l };
        -coeffs[i] / l
    });
    &eig.eigenvectors * scaled
}

/// Damped Newton root-solve of the gradient, starting from `guess` or the site centers.
pub fn solve_equilibrium(
    config: &ArrayConfig,
    guess: Option<&[Vector3<f64>]>,
    opts: &SolverOptions,
) -> Result<EquilibriumResult, EquilibriumError> {
    let n = config.n_ions();
    let mut pos: Configuration3N = match guess {
        Some(g) => {
            check_len(config, g)?;
            g.to_vec()
        }
        None => config.sites.iter().map(|s| s.center).collect(),
    };
    let e = config.species.charge;
    let tol = opts.tolerance.unwrap_or_else(|| {
        let d = config.min_site_spacing().unwrap_or(1.0);
        opts.relative_tolerance * K_E * e * e / (d * d)
    });
    let mut grad = potential_gradient(config, &pos)?;
    let mut residual = max_force(&grad);
    let mut iterations = 0;
    while residual > tol || (iterations == 0 && n > 1) {
        if iterations >= opts.max_iterations {
            return Err(EquilibriumError::NonConvergence { iterations, residual });
        }
        iterations += 1;
        let h = potential_hessian(config, &pos)?;
        let step = newton_step(&h, &flatten(&grad));
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Configuration3N = (0..n)
                .map(|j| pos[j] + Vector3::new(step[j], step[n + j], step[2 * n + j]) * alpha)
                .collect();
            if check_collapse(config, &trial).is_ok() {
                if let Ok(g) = potential_gradient(config, &trial) {
                    let r = max_force(&g);
                    if r < residual || r <= tol {
                        accepted = Some((trial, g, r));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((p, g, r)) => {
                pos = p;
                grad = g;
                residual = r;
            }
            None => {
                if residual <= tol {
                    break;
                }
                return Err(EquilibriumError::NonConvergence { iterations, residual });
            }
        }
    }
    check_collapse(config, &pos)?;
    Ok(EquilibriumResult {
        positions: pos,
        gradient_norm: residual,
        iterations,
        converged: true,
    })
}
