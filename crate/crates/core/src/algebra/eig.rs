//! Dense spectra via real Schur reduction, with inverse-iteration
//! eigenvectors when pairs are requested.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::EigenError;

fn check_input(m: &DMatrix<f64>) -> Result<(), EigenError> {
    if m.nrows() != m.ncols() {
        return Err(EigenError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    Ok(())
}

/// Diagonal similarity scaling by powers of two so row and column norms of
/// each index match. Eigenvalues are untouched; the QR sweep converges far
/// more reliably on the balanced matrix.
fn balance(m: &DMatrix<f64>) -> DMatrix<f64> {
    const RADIX: f64 = 2.0;
    const SQRDX: f64 = 4.0;
    let mut a = m.clone();
    let n = a.nrows();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c > 0.0 && r > 0.0 && c.is_finite() && r.is_finite() {
                let mut f = 1.0;
                let s = c + r;
                let mut g = r / RADIX;
                while c < g {
                    f *= RADIX;
                    c *= SQRDX;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= SQRDX;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
    a
}

const SCHUR_MAX_ITER: usize = 200_000;

/// Full spectrum of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, EigenError> {
    check_input(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(balance(m), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(EigenError::NoConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Spectrum used where no error channel exists. Returns an empty vector on
/// bad input or (rare) non-convergence; callers treat that conservatively.
pub fn eigenvalues_infallible(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 || m.nrows() != m.ncols() || m.iter().any(|v| !v.is_finite()) {
        return Vec::new();
    }
    match nalgebra::linalg::Schur::try_new(balance(m), f64::EPSILON, SCHUR_MAX_ITER) {
        Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
        None => Vec::new(),
    }
}

/// Deterministic pseudo-random unit vector for starting inverse iteration.
fn seed_vector(n: usize, salt: u64) -> DVector<Complex<f64>> {
    let mut state = 0x9e37_79b9_7f4a_7c15u64 ^ salt.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let v = DVector::from_fn(n, |_, _| Complex::new(next(), next()));
    let norm = v.norm();
    v.unscale(norm)
}

/// Eigenvalue/eigenvector pairs via inverse iteration around each Schur
/// eigenvalue. Residuals satisfy `|m v - lambda v| <= 1e-8 |m|` on
/// well-conditioned inputs; callers needing the guarantee should assert it.
pub fn eigenpairs(
    m: &DMatrix<f64>,
) -> Result<Vec<(Complex<f64>, DVector<Complex<f64>>)>, EigenError> {
    check_input(m)?;
    let n = m.nrows();
    let lambdas = eigenvalues(m)?;
    let mc = m.map(|v| Complex::new(v, 0.0));
    let scale = m.norm();
    let mut out = Vec::with_capacity(n);
    for (k, &lambda) in lambdas.iter().enumerate() {
        // shift slightly off the eigenvalue so the factorization stays usable
        let shift = lambda + Complex::new(1e-10 * (1.0 + scale), 1e-10 * (1.0 + scale));
        let shifted = &mc - DMatrix::from_diagonal_element(n, n, shift);
        let lu = shifted.lu();
        let mut v = seed_vector(n, k as u64);
        for _ in 0..8 {
            match lu.solve(&v) {
                Some(w) => {
                    let norm = w.norm();
                    if !norm.is_finite() || norm == 0.0 {
                        break;
                    }
                    v = w.unscale(norm);
                }
                None => break,
            }
        }
        // Rayleigh quotient refines the eigenvalue for the returned pair
        let av = &mc * &v;
        let rayleigh = v.dotc(&av);
        out.push((rayleigh, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_real(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        v.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        v
    }

    #[test]
    fn diagonal_spectrum() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0, 3.0]));
        let eigs = sorted_real(eigenvalues(&m).unwrap());
        let expect = [-2.0, 1.0, 3.0];
        for (e, x) in eigs.iter().zip(expect) {
            assert!((e.re - x).abs() < 1e-12 && e.im.abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_generator_is_pure_imaginary() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let eigs = eigenvalues(&m).unwrap();
        let mut ims: Vec<f64> = eigs.iter().map(|e| e.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eigs.iter().all(|e| e.re.abs() < 1e-12));
        assert!((ims[0] + 1.0).abs() < 1e-12 && (ims[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenpair_residuals_are_small() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, -1.0, 0.3, 0.5, 1.0, -0.2, 0.0, 0.7, -3.0],
        );
        let pairs = eigenpairs(&m).unwrap();
        let mc = m.map(|v| Complex::new(v, 0.0));
        for (lambda, v) in pairs {
            let resid = (&mc * &v - v.map(|c| c * lambda)).norm();
            assert!(resid <= 1e-8 * m.norm(), "residual {resid}");
        }
    }

    #[test]
    fn non_square_rejected() {
        let m = DMatrix::zeros(2, 3);
        assert!(matches!(
            eigenvalues(&m),
            Err(EigenError::NotSquare { .. })
        ));
    }
}
