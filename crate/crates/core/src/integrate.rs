//! Time stepping of the linearized equations of motion M q̈ = W q̇ − Φ q + f(t).

use nalgebra::{DMatrix, DVector};

use crate::modes::SystemMatrices;

/// Generator A of ẏ = A y for y = [q, q̇].
pub fn first_order_matrix(mats: &SystemMatrices) -> DMatrix<f64> {
    let d = mats.dim();
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        a[(i, d + i)] = 1.0;
        let inv = 1.0 / mats.masses[i];
        for j in 0..d {
            a[(d + i, j)] = -mats.phi[(i, j)] * inv;
            a[(d + i, d + j)] = mats.w[(i, j)] * inv;
        }
    }
    a
}

/// One classical RK4 step of ẏ = f(t, y).
pub fn rk4_step<F>(f: &F, t: f64, y: &DVector<f64>, dt: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, &(y + &k1 * (0.5 * dt)));
    let k3 = f(t + 0.5 * dt, &(y + &k2 * (0.5 * dt)));
    let k4 = f(t + dt, &(y + &k3 * dt));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Exact flow e^{A·dt} of the autonomous linear system.
#[derive(Debug, Clone)]
pub struct LinearPropagator {
    pub dt: f64,
    pub matrix: DMatrix<f64>,
}

impl LinearPropagator {
    pub fn new(mats: &SystemMatrices, dt: f64) -> Self {
        // Work on (q, q̇/ω_ref) so both blocks of the generator carry comparable entries.
        let d = mats.dim();
        let stiff = (0..d).map(|i| mats.phi[(i, i)].abs() / mats.masses[i]).fold(0.0, f64::max);
        let cyc = (0..d).map(|i| mats.w.column(i).amax() / mats.masses[i]).fold(0.0, f64::max);
        let w_ref = stiff.sqrt().max(cyc).max(f64::MIN_POSITIVE);
        let mut a = first_order_matrix(mats) * dt;
        for i in 0..d {
            for j in 0..d {
                a[(i, d + j)] *= w_ref;
                a[(d + i, j)] /= w_ref;
            }
        }
        let m = taylor_exp(&a);
        let mut p = m;
        for i in 0..d {
            for j in 0..d {
                p[(i, d + j)] /= w_ref;
                p[(d + i, j)] *= w_ref;
            }
        }
        Self { dt, matrix: p }
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.matrix * y
    }
}

/// Scaling-and-squaring Taylor exponential; the scaled argument has norm ≤ 1/8.
fn taylor_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.norm();
    let squarings = if norm > 0.125 { (norm / 0.125).log2().ceil() as i32 } else { 0 };
    let x = a / 2f64.powi(squarings);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=18 {
        term = &term * &x / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}
