//! Finite-difference Jacobian blocks of the fast/algebraic subsystem.

use nalgebra::DMatrix;

use crate::error::SolveError;
use crate::layout::{PartitionedState, VarClass};
use crate::model::Model;

use super::newton::fd_jacobian_at;

/// The four blocks of the fast/algebraic linearization at a point.
#[derive(Debug, Clone)]
pub struct JacobianBlocks {
    /// d f / d x
    pub d_xf: DMatrix<f64>,
    /// d f / d y
    pub d_yf: DMatrix<f64>,
    /// d g / d x
    pub d_xg: DMatrix<f64>,
    /// d g / d y
    pub d_yg: DMatrix<f64>,
    /// Evaluation point.
    pub at: PartitionedState,
}

/// Slow-variable blocks, used for diagnostics.
#[derive(Debug, Clone)]
pub struct SlowBlocks {
    /// d h_c / d z_c
    pub d_zc_hc: DMatrix<f64>,
    /// d h_c / d x
    pub d_x_hc: DMatrix<f64>,
    /// d h_c / d y
    pub d_y_hc: DMatrix<f64>,
}

/// Central finite-difference blocks at `s`, step `max(1e-6, 1e-6 |v|)` per
/// variable. Errors if any perturbed residual evaluates non-finite.
pub fn jacobian_blocks(
    model: &dyn Model,
    s: &PartitionedState,
) -> Result<JacobianBlocks, SolveError> {
    let layout = model.layout();
    let xs: Vec<usize> = layout.range_of(VarClass::Fast).collect();
    let ys: Vec<usize> = layout.range_of(VarClass::Algebraic).collect();
    let nf = layout.n_fast();
    let na = layout.n_algebraic();
    let f = |p: &PartitionedState, out: &mut [f64]| model.fast_rhs(p, out);
    let g = |p: &PartitionedState, out: &mut [f64]| model.algebraic_residual(p, out);
    Ok(JacobianBlocks {
        d_xf: fd_jacobian_at(s, &xs, nf, &f)?,
        d_yf: fd_jacobian_at(s, &ys, nf, &f)?,
        d_xg: fd_jacobian_at(s, &xs, na, &g)?,
        d_yg: fd_jacobian_at(s, &ys, na, &g)?,
        at: s.clone(),
    })
}

/// Slow-block companions of [`jacobian_blocks`].
pub fn slow_blocks(
    model: &dyn Model,
    t: f64,
    s: &PartitionedState,
) -> Result<SlowBlocks, SolveError> {
    let layout = model.layout();
    let zs: Vec<usize> = layout.range_of(VarClass::SlowContinuous).collect();
    let xs: Vec<usize> = layout.range_of(VarClass::Fast).collect();
    let ys: Vec<usize> = layout.range_of(VarClass::Algebraic).collect();
    let ns = layout.n_slow();
    let h = |p: &PartitionedState, out: &mut [f64]| model.slow_rhs(t, p, out);
    Ok(SlowBlocks {
        d_zc_hc: fd_jacobian_at(s, &zs, ns, &h)?,
        d_x_hc: fd_jacobian_at(s, &xs, ns, &h)?,
        d_y_hc: fd_jacobian_at(s, &ys, ns, &h)?,
    })
}

/// Stack the blocks into the full fast/algebraic matrix
/// `[[d_xf, d_yf], [d_xg, d_yg]]`.
pub fn block_matrix(b: &JacobianBlocks) -> DMatrix<f64> {
    let nf = b.d_xf.nrows();
    let na = b.d_xg.nrows();
    let mut m = DMatrix::zeros(nf + na, nf + na);
    m.view_mut((0, 0), (nf, nf)).copy_from(&b.d_xf);
    m.view_mut((0, nf), (nf, na)).copy_from(&b.d_yf);
    m.view_mut((nf, 0), (na, nf)).copy_from(&b.d_xg);
    m.view_mut((nf, nf), (na, na)).copy_from(&b.d_yg);
    m
}

/// Reduced fast Jacobian `d_xf - d_yf d_yg^{-1} d_xg`, the linearization of
/// the frozen transient model with the algebraic variables eliminated.
pub fn reduced_jacobian(b: &JacobianBlocks) -> Result<DMatrix<f64>, SolveError> {
    if b.d_yg.nrows() == 0 {
        return Ok(b.d_xf.clone());
    }
    let lu = b.d_yg.clone().lu();
    let mut min_pivot = f64::INFINITY;
    let u = lu.u();
    for i in 0..u.nrows() {
        min_pivot = min_pivot.min(u[(i, i)].abs());
    }
    if min_pivot < 1e-12 {
        return Err(SolveError::SingularJacobian {
            pivot: min_pivot,
            iteration: 0,
        });
    }
    let solved = lu.solve(&b.d_xg).ok_or(SolveError::SingularJacobian {
        pivot: min_pivot,
        iteration: 0,
    })?;
    Ok(&b.d_xf - &b.d_yf * solved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::LinearFastAlgebraic;

    #[test]
    fn linear_blocks_are_exact() {
        // f = -x + y, g = -2y + z_c
        let model = LinearFastAlgebraic;
        let mut s = PartitionedState::zeros(model.layout());
        s.slow_mut()[0] = 4.0;
        s.fast_mut()[0] = 1.5;
        s.algebraic_mut()[0] = -0.5;
        let b = jacobian_blocks(&model, &s).unwrap();
        assert!((b.d_xf[(0, 0)] + 1.0).abs() < 1e-9);
        assert!((b.d_yf[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((b.d_xg[(0, 0)]).abs() < 1e-9);
        assert!((b.d_yg[(0, 0)] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn reduced_one_by_one() {
        // D_xf=[-1], D_yf=[1], D_xg=[1], D_yg=[-2] reduces to [-0.5]
        let b = JacobianBlocks {
            d_xf: DMatrix::from_element(1, 1, -1.0),
            d_yf: DMatrix::from_element(1, 1, 1.0),
            d_xg: DMatrix::from_element(1, 1, 1.0),
            d_yg: DMatrix::from_element(1, 1, -2.0),
            at: PartitionedState::from_flat(
                crate::fixtures::LinearFastAlgebraic.layout(),
                vec![0.0, 0.0, 0.0],
            )
            .unwrap(),
        };
        let r = reduced_jacobian(&b).unwrap();
        assert!((r[(0, 0)] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_coupling_reduces_to_dxf() {
        let b = JacobianBlocks {
            d_xf: DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
            d_yf: DMatrix::zeros(2, 1),
            d_xg: DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
            d_yg: DMatrix::from_element(1, 1, 5.0),
            at: PartitionedState::from_flat(
                crate::fixtures::LinearFastAlgebraic.layout(),
                vec![0.0, 0.0, 0.0],
            )
            .unwrap(),
        };
        let r = reduced_jacobian(&b).unwrap();
        assert_eq!(r, b.d_xf);
    }

    #[test]
    fn singular_dyg_is_an_error() {
        let b = JacobianBlocks {
            d_xf: DMatrix::from_element(1, 1, -1.0),
            d_yf: DMatrix::from_element(1, 1, 1.0),
            d_xg: DMatrix::from_element(1, 1, 1.0),
            d_yg: DMatrix::from_element(1, 1, 0.0),
            at: PartitionedState::from_flat(
                crate::fixtures::LinearFastAlgebraic.layout(),
                vec![0.0, 0.0, 0.0],
            )
            .unwrap(),
        };
        assert!(matches!(
            reduced_jacobian(&b),
            Err(SolveError::SingularJacobian { .. })
        ));
    }
}
