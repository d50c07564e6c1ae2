//! Constraint-manifold point classification: singularity, type-k, and
//! membership in the stable set where the reduced Jacobian is Hurwitz.

use num_complex::Complex;
use serde::Serialize;

use super::eig::eigenvalues_infallible;
use super::jacobian::{block_matrix, reduced_jacobian, JacobianBlocks};

/// A point is declared singular when the smallest singular value of the
/// fast/algebraic block matrix falls below this fraction of the largest.
pub const SINGULARITY_RATIO: f64 = 1e-8;

/// Stability is asserted only when every reduced eigenvalue has real part
/// below this margin, so marginal points are not classified stable.
pub const GAMMA_S_MARGIN: f64 = -1e-9;

/// Classification of one manifold point.
#[derive(Debug, Clone, Serialize)]
pub struct ManifoldPointClass {
    /// Block matrix numerically rank-deficient.
    pub singular: bool,
    /// Number of block-matrix eigenvalues with positive real part.
    pub type_k: usize,
    /// Nonsingular, reduced Jacobian Hurwitz: the frozen transient model has
    /// a stable equilibrium here.
    pub gamma_s_member: bool,
    /// Spectrum of the reduced Jacobian; empty when it cannot be formed.
    pub reduced_spectrum: Vec<Complex<f64>>,
    /// Max real part of the reduced spectrum; `None` when not computable.
    pub margin: Option<f64>,
    /// Sign of the block-matrix determinant (used for crossing detection).
    pub block_det: f64,
}

/// Smallest and largest singular values with a capped iteration budget;
/// falls back to LU pivot magnitudes if the SVD sweep stalls.
pub(crate) fn singular_value_extremes(m: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    if let Some(svd) = m.clone().try_svd(false, false, f64::EPSILON, 50_000) {
        (svd.singular_values.min(), svd.singular_values.max())
    } else {
        let lu = m.clone().lu();
        let u = lu.u();
        let mut mn = f64::INFINITY;
        let mut mx: f64 = 0.0;
        for i in 0..u.nrows().min(u.ncols()) {
            let p = u[(i, i)].abs();
            mn = mn.min(p);
            mx = mx.max(p);
        }
        (mn, mx)
    }
}

/// Classify a point from its Jacobian blocks.
pub fn classify_point(b: &JacobianBlocks) -> ManifoldPointClass {
    let block = block_matrix(b);
    let dim = block.nrows();
    if dim == 0 {
        return ManifoldPointClass {
            singular: false,
            type_k: 0,
            gamma_s_member: true,
            reduced_spectrum: Vec::new(),
            margin: Some(f64::NEG_INFINITY),
            block_det: 1.0,
        };
    }

    let (s_min, s_max) = singular_value_extremes(&block);
    let singular = s_max == 0.0 || s_min < SINGULARITY_RATIO * s_max;
    let block_det = block.clone().lu().determinant();

    let block_eigs = eigenvalues_infallible(&block);
    let type_k = block_eigs.iter().filter(|e| e.re > 0.0).count();

    let dyg_nonsingular = if b.d_yg.nrows() == 0 {
        true
    } else {
        let (mn, mx) = singular_value_extremes(&b.d_yg);
        mx > 0.0 && mn >= SINGULARITY_RATIO * mx
    };

    let (reduced_spectrum, margin) = if dyg_nonsingular {
        match reduced_jacobian(b) {
            Ok(r) => {
                let eigs = eigenvalues_infallible(&r);
                let margin = eigs
                    .iter()
                    .map(|e| e.re)
                    .fold(f64::NEG_INFINITY, f64::max);
                let margin = if eigs.is_empty() {
                    Some(f64::NEG_INFINITY)
                } else {
                    Some(margin)
                };
                (eigs, margin)
            }
            Err(_) => (Vec::new(), None),
        }
    } else {
        (Vec::new(), None)
    };

    let gamma_s_member =
        !singular && dyg_nonsingular && margin.map(|m| m < GAMMA_S_MARGIN).unwrap_or(false);

    ManifoldPointClass {
        singular,
        type_k,
        gamma_s_member,
        reduced_spectrum,
        margin,
        block_det,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    use crate::fixtures::LinearFastAlgebraic;
    use crate::layout::PartitionedState;
    use crate::model::Model;

    fn blocks(d_xf: &[f64], nf: usize, d_yf: &[f64], d_xg: &[f64], d_yg: &[f64], na: usize) -> JacobianBlocks {
        JacobianBlocks {
            d_xf: DMatrix::from_row_slice(nf, nf, d_xf),
            d_yf: DMatrix::from_row_slice(nf, na, d_yf),
            d_xg: DMatrix::from_row_slice(na, nf, d_xg),
            d_yg: DMatrix::from_row_slice(na, na, d_yg),
            at: PartitionedState::zeros(LinearFastAlgebraic.layout()),
        }
    }

    #[test]
    fn stable_one_by_one_is_gamma_s() {
        // reduced [-0.5], block eigenvalues negative
        let b = blocks(&[-1.0], 1, &[1.0], &[1.0], &[-2.0], 1);
        let c = classify_point(&b);
        assert!(!c.singular);
        assert_eq!(c.type_k, 0);
        assert!(c.gamma_s_member);
        assert!((c.margin.unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_dyg_is_singular_and_not_gamma_s() {
        // purely algebraic point with a vanished constraint derivative
        let b = blocks(&[], 0, &[], &[], &[0.0], 1);
        let c = classify_point(&b);
        assert!(c.singular);
        assert!(!c.gamma_s_member);
        assert!(c.margin.is_none());
    }

    #[test]
    fn coupled_dyg_rank_loss_blocks_gamma_s() {
        // d_yg singular but the full block matrix is not: the point is not
        // in the singular set, yet the reduced form does not exist
        let b = blocks(&[-1.0], 1, &[1.0], &[1.0], &[0.0], 1);
        let c = classify_point(&b);
        assert!(!c.singular);
        assert!(!c.gamma_s_member);
        assert!(c.margin.is_none());
    }

    #[test]
    fn mixed_spectrum_reports_positive_margin() {
        // decoupled: reduced = d_xf = diag(1, -2)
        let b = blocks(&[1.0, 0.0, 0.0, -2.0], 2, &[0.0, 0.0], &[0.0, 0.0], &[-1.0], 1);
        let c = classify_point(&b);
        assert!(!c.gamma_s_member);
        assert!((c.margin.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(c.type_k, 1);
    }

    #[test]
    fn classification_is_permutation_invariant() {
        // permute fast and algebraic orderings; spectra and flags must agree
        let d_xf = [-1.0, 0.4, 0.2, -3.0];
        let d_yf = [0.5, 0.0, 1.0, -0.3];
        let d_xg = [0.1, 0.8, -0.6, 0.0];
        let d_yg = [-2.0, 0.3, 0.1, -1.5];
        let b = blocks(&d_xf, 2, &d_yf, &d_xg, &d_yg, 2);
        let c = classify_point(&b);

        // swap the two fast variables and the two algebraic variables;
        // rows and columns of every block permute accordingly
        let swap = |m: &DMatrix<f64>| {
            let mut p = m.clone();
            p.swap_rows(0, 1);
            p.swap_columns(0, 1);
            p
        };
        let bp = JacobianBlocks {
            d_xf: swap(&b.d_xf),
            d_yf: swap(&b.d_yf),
            d_xg: swap(&b.d_xg),
            d_yg: swap(&b.d_yg),
            at: b.at.clone(),
        };
        let cp = classify_point(&bp);
        assert_eq!(c.singular, cp.singular);
        assert_eq!(c.type_k, cp.type_k);
        assert_eq!(c.gamma_s_member, cp.gamma_s_member);
        assert!((c.margin.unwrap() - cp.margin.unwrap()).abs() < 1e-9);
    }
}
