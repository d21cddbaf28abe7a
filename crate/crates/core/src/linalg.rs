//! Small complex linear-algebra helpers shared by the channel and
//! deterministic-equivalent modules.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{invalid, numerical, Result};

pub type CMat = DMatrix<Complex64>;

/// Maximum elementwise deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix: returns `(eigenvalues, U)` with
/// `A = U diag(v) U^H`. Eigenvalues are real and ascending.
pub fn hermitian_eig(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    if a.nrows() != a.ncols() {
        return Err(invalid("hermitian_eig: matrix must be square"));
    }
    if hermitian_defect(a) > 1e-8 {
        return Err(invalid("hermitian_eig: matrix is not Hermitian"));
    }
    // Make the input exactly Hermitian before factorizing so roundoff in the
    // caller cannot leak into complex eigenvalues.
    let n = a.nrows();
    let mut h = a.clone();
    for i in 0..n {
        h[(i, i)] = Complex64::new(h[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)].conj());
            h[(i, j)] = avg;
            h[(j, i)] = avg.conj();
        }
    }
    let se = h.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &se.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// Principal square root of a Hermitian PSD matrix.
///
/// Eigenvalues mildly negative from roundoff (>= -1e-10) are clamped to zero;
/// anything more negative is rejected.
pub fn sqrt_psd(a: &CMat) -> Result<CMat> {
    let (vals, u) = hermitian_eig(a)?;
    if vals.iter().any(|&v| v < -1e-10) {
        return Err(invalid(format!(
            "sqrt_psd: matrix not PSD (min eigenvalue {:.3e})",
            vals.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let n = a.nrows();
    let mut scaled = u.clone();
    for (col, &v) in vals.iter().enumerate() {
        let s = Complex64::new(v.max(0.0).sqrt(), 0.0);
        for r in 0..n {
            scaled[(r, col)] *= s;
        }
    }
    Ok(&scaled * u.adjoint())
}

/// Inverse via LU; errors on singular input.
pub fn inverse(a: &CMat) -> Result<CMat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| numerical("matrix inverse: singular input"))
}

/// Solve `A x = b` for a real square system with a condition guard: fails
/// when the smallest singular value is below `tol` times the largest.
pub fn solve_real_guarded(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > tol * smax) {
        return Err(numerical(format!(
            "linear system ill-conditioned (sigma_min/sigma_max = {:.3e})",
            smin / smax
        )));
    }
    svd.solve(b, 0.0)
        .map_err(|e| numerical(format!("svd solve failed: {e}")))
}

/// `tr(A B)` for square complex matrices, computed without forming `A B`.
pub fn trace_prod(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::default();
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let i3 = CMat::identity(3, 3);
        let s = sqrt_psd(&i3).unwrap();
        assert!((s - &i3).norm() < 1e-12);

        let d = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(4.0, 0.0), c(9.0, 0.0)]));
        let s = sqrt_psd(&d).unwrap();
        assert_relative_eq!(s[(0, 0)].re, 2.0, epsilon = 1e-12);
        assert_relative_eq!(s[(1, 1)].re, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_reconstructs() {
        let a = CMat::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(1.0, 0.0)],
        );
        let s = sqrt_psd(&a).unwrap();
        let err = (&s * &s - &a).norm() / a.norm();
        assert!(err < 1e-9, "reconstruction error {err}");
        assert!(hermitian_defect(&s) < 1e-10);
    }

    #[test]
    fn sqrt_complex_hermitian() {
        let a = CMat::from_row_slice(
            3,
            3,
            &[
                c(2.0, 0.0),
                c(0.3, 0.4),
                c(0.1, -0.2),
                c(0.3, -0.4),
                c(1.5, 0.0),
                c(0.2, 0.1),
                c(0.1, 0.2),
                c(0.2, -0.1),
                c(1.0, 0.0),
            ],
        );
        let s = sqrt_psd(&a).unwrap();
        assert!((&s * &s - &a).norm() < 1e-9 * a.norm().max(1.0));
    }

    #[test]
    fn non_hermitian_rejected() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.2, 0.0), c(1.0, 0.0)]);
        assert!(sqrt_psd(&a).is_err());
    }

    #[test]
    fn guarded_solve_flags_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(solve_real_guarded(&a, &b, 1e-10).is_err());
    }

    #[test]
    fn trace_prod_matches_full_product() {
        let a = CMat::from_fn(3, 3, |i, j| c((i + 2 * j) as f64, (i as f64) - 1.0));
        let b = CMat::from_fn(3, 3, |i, j| c(1.0 / (1.0 + i as f64 + j as f64), 0.3));
        let direct = (&a * &b).trace();
        let fast = trace_prod(&a, &b);
        assert!((direct - fast).norm() < 1e-12);
    }
}
