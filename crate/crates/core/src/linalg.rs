//! Thin bridges to the dense eigensolver and LU factorization.

use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64;

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Eigenvalues and right eigenvectors (columns) of a real square matrix.
pub fn eigen_real(a: &DMatrix<f64>) -> Option<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    let eig = to_faer(a).eigen().ok()?;
    let s = eig.S();
    let u = eig.U();
    let values = (0..n).map(|i| s[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Some((values, vectors))
}

/// ln|det A| and the sign of det A, from a partially pivoted LU factorization.
/// The log form avoids the overflow and underflow of the raw determinant for large systems.
pub fn log_abs_det(a: &DMatrix<f64>) -> (f64, f64) {
    let lu = a.clone().lu();
    let u = lu.u();
    let mut log = 0.0;
    let mut sign: f64 = lu.p().determinant();
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        log += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    (log, sign)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_matches_direct() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 0.5, 0.0, 3.0, 0.0, -1.0]);
        let (log, sign) = log_abs_det(&a);
        let det = a.determinant();
        assert!((sign * log.exp() - det).abs() < 1e-12 * det.abs());
    }

    #[test]
    fn eigen_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let (vals, _) = eigen_real(&a).unwrap();
        let mut im: Vec<f64> = vals.iter().map(|v| v.im).collect();
        im.sort_by(f64::total_cmp);
        assert!((im[0] + 1.0).abs() < 1e-14 && (im[1] - 1.0).abs() < 1e-14);
    }
}
