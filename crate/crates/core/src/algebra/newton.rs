//! Damped Newton iteration over a subset of the flat state vector.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;
use crate::layout::{sup_norm, PartitionedState, VarClass};
use crate::model::Model;

/// Tolerances and iteration limits for the Newton solvers.
#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Convergence threshold on the sup-norm of the residual.
    pub tol: f64,
    pub max_iterations: usize,
    /// Iterations taken even when the initial residual is already below
    /// tolerance. Integrator steps use 1: the predictor residual scales
    /// with the step size and would otherwise stall slow decays.
    pub min_iterations: usize,
    /// A pivot magnitude below this during factorization signals singularity.
    pub pivot_tol: f64,
    /// Backtracking line search halves the step at most this many times.
    pub max_backtrack: u32,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 50,
            min_iterations: 0,
            pivot_tol: 1e-12,
            max_backtrack: 8,
        }
    }
}

/// Diagnostics of a converged Newton run.
#[derive(Debug, Clone)]
pub struct SolveInfo {
    pub iterations: usize,
    /// Residual sup-norms, one entry per iterate including start and finish.
    pub residual_norms: Vec<f64>,
}

/// LU solve with an explicit pivot check so proximity to a singular system
/// surfaces as an error instead of garbage.
pub fn lu_solve_checked(
    mat: DMatrix<f64>,
    rhs: &DVector<f64>,
    pivot_tol: f64,
    iteration: usize,
) -> Result<DVector<f64>, SolveError> {
    let lu = mat.lu();
    let mut min_pivot = f64::INFINITY;
    let u = lu.u();
    for i in 0..u.nrows().min(u.ncols()) {
        min_pivot = min_pivot.min(u[(i, i)].abs());
    }
    if !min_pivot.is_finite() || min_pivot < pivot_tol {
        return Err(SolveError::SingularJacobian {
            pivot: if min_pivot.is_finite() { min_pivot } else { f64::NAN },
            iteration,
        });
    }
    lu.solve(rhs).ok_or(SolveError::SingularJacobian {
        pivot: min_pivot,
        iteration,
    })
}

const FD_REL_STEP: f64 = 1e-6;

fn fd_step(v: f64) -> f64 {
    FD_REL_STEP.max(FD_REL_STEP * v.abs())
}

/// Central finite-difference Jacobian of `residual` with respect to the flat
/// indices in `unknowns`, evaluated at `s`.
pub(crate) fn fd_jacobian_at<F>(
    s: &PartitionedState,
    unknowns: &[usize],
    dim_out: usize,
    residual: &F,
) -> Result<DMatrix<f64>, SolveError>
where
    F: Fn(&PartitionedState, &mut [f64]),
{
    let mut jac = DMatrix::zeros(dim_out, unknowns.len());
    let mut probe = s.clone();
    let mut plus = vec![0.0; dim_out];
    let mut minus = vec![0.0; dim_out];
    for (col, &idx) in unknowns.iter().enumerate() {
        let base = s.get(idx);
        let h = fd_step(base);
        probe.set(idx, base + h);
        residual(&probe, &mut plus);
        probe.set(idx, base - h);
        residual(&probe, &mut minus);
        probe.set(idx, base);
        for row in 0..dim_out {
            let d = (plus[row] - minus[row]) / (2.0 * h);
            if !d.is_finite() {
                return Err(SolveError::NonFiniteEntry);
            }
            jac[(row, col)] = d;
        }
    }
    Ok(jac)
}

/// Newton iteration on the variables listed in `unknowns`, driving `residual`
/// to zero. `state` is updated in place on success and left at the last
/// iterate on failure.
pub fn newton_solve<F>(
    state: &mut PartitionedState,
    unknowns: &[usize],
    residual: F,
    opts: &NewtonOptions,
) -> Result<SolveInfo, SolveError>
where
    F: Fn(&PartitionedState, &mut [f64]),
{
    let dim = unknowns.len();
    let mut r = vec![0.0; dim];
    residual(state, &mut r);
    let mut norm = sup_norm(&r);
    if !norm.is_finite() {
        return Err(SolveError::NonFiniteEntry);
    }
    let mut norms = vec![norm];
    for iteration in 0..opts.max_iterations {
        if norm <= opts.tol && iteration >= opts.min_iterations {
            return Ok(SolveInfo {
                iterations: iteration,
                residual_norms: norms,
            });
        }
        let jac = fd_jacobian_at(state, unknowns, dim, &residual)?;
        let rhs = DVector::from_iterator(dim, r.iter().map(|v| -v));
        let step = lu_solve_checked(jac, &rhs, opts.pivot_tol, iteration)?;

        // Backtracking on the residual norm; if nothing improves take the
        // shortest probe so the iteration can still creep forward.
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut trial = state.clone();
        let mut tr = vec![0.0; dim];
        for _ in 0..=opts.max_backtrack {
            for (k, &idx) in unknowns.iter().enumerate() {
                trial.set(idx, state.get(idx) + alpha * step[k]);
            }
            residual(&trial, &mut tr);
            let tnorm = sup_norm(&tr);
            if tnorm.is_finite() && (tnorm < norm || tnorm <= opts.tol) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            for (k, &idx) in unknowns.iter().enumerate() {
                trial.set(idx, state.get(idx) + alpha * step[k]);
            }
            residual(&trial, &mut tr);
            if !sup_norm(&tr).is_finite() {
                return Err(SolveError::NonFiniteEntry);
            }
        }
        *state = trial;
        r.copy_from_slice(&tr);
        norm = sup_norm(&r);
        norms.push(norm);
    }
    if norm <= opts.tol {
        return Ok(SolveInfo {
            iterations: opts.max_iterations,
            residual_norms: norms,
        });
    }
    Err(SolveError::MaxIterations {
        iterations: opts.max_iterations,
        residual: norm,
    })
}

/// Solve the algebraic constraints g = 0 for y with z_c, z_d, x held fixed.
/// The state's y entries are the initial guess and are replaced by the
/// solution.
pub fn solve_algebraic(
    model: &dyn Model,
    state: &mut PartitionedState,
    opts: &NewtonOptions,
) -> Result<SolveInfo, SolveError> {
    let layout = model.layout();
    let unknowns: Vec<usize> = layout.range_of(VarClass::Algebraic).collect();
    newton_solve(state, &unknowns, |s, out| model.algebraic_residual(s, out), opts)
}

/// Solve the frozen fast equilibrium f = 0, g = 0 for (x, y) with slow
/// variables held fixed: the map l(z_c, z_d).
pub fn solve_equilibrium_fast(
    model: &dyn Model,
    state: &mut PartitionedState,
    opts: &NewtonOptions,
) -> Result<SolveInfo, SolveError> {
    let layout = model.layout();
    let n_fast = layout.n_fast();
    let unknowns: Vec<usize> = layout
        .range_of(VarClass::Fast)
        .chain(layout.range_of(VarClass::Algebraic))
        .collect();
    newton_solve(
        state,
        &unknowns,
        |s, out| {
            let (fast, alg) = out.split_at_mut(n_fast);
            model.fast_rhs(s, fast);
            model.algebraic_residual(s, alg);
        },
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{CubicFixture, ScalarQuadratic};
    use crate::layout::Layout;

    #[test]
    fn scalar_quadratic_root() {
        // g(y) = y^2 - 4 from guess 3 lands on 2
        let model = ScalarQuadratic;
        let mut s = PartitionedState::zeros(model.layout());
        s.algebraic_mut()[0] = 3.0;
        let info = solve_algebraic(&model, &mut s, &NewtonOptions::default()).unwrap();
        assert!((s.algebraic()[0] - 2.0).abs() < 1e-12);
        assert!(info.iterations > 0);
    }

    #[test]
    fn singular_fixture_reports_singular_jacobian() {
        // two parallel constraint rows: rank-1 Jacobian, nonzero residual
        struct Flat(Layout);
        impl Model for Flat {
            fn layout(&self) -> &Layout {
                &self.0
            }
            fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
            fn fast_rhs(&self, _s: &PartitionedState, _out: &mut [f64]) {}
            fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]) {
                let (a, b) = (s.algebraic()[0], s.algebraic()[1]);
                out[0] = a + b - 1.0;
                out[1] = a + b;
            }
        }
        let model = Flat(
            Layout::new(vec![], vec![], vec![], vec!["y1".into(), "y2".into()]).unwrap(),
        );
        let mut s = PartitionedState::zeros(model.layout());
        let err = solve_algebraic(&model, &mut s, &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, SolveError::SingularJacobian { .. }));
    }

    #[test]
    fn linear_fast_subsystem_equilibrium() {
        // f = -x + y, g = -2y + z_c with z_c = 4 gives (x, y) = (2, 2)
        let model = crate::fixtures::LinearFastAlgebraic;
        let mut s = PartitionedState::zeros(model.layout());
        s.slow_mut()[0] = 4.0;
        s.fast_mut()[0] = 0.3;
        s.algebraic_mut()[0] = 0.1;
        solve_equilibrium_fast(&model, &mut s, &NewtonOptions::default()).unwrap();
        assert!((s.fast()[0] - 2.0).abs() < 1e-10);
        assert!((s.algebraic()[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn cubic_far_guess_fails_or_finds_other_root() {
        // f = -x(x^2 - 1): roots at -1, 0, 1. A far guess must not silently
        // report success at a wrong point.
        let model = CubicFixture;
        let mut s = PartitionedState::zeros(model.layout());
        s.fast_mut()[0] = 40.0;
        match solve_equilibrium_fast(&model, &mut s, &NewtonOptions::default()) {
            Ok(_) => {
                let x = s.fast()[0];
                let near_root = [(x - 1.0).abs(), x.abs(), (x + 1.0).abs()]
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                assert!(near_root < 1e-8);
            }
            Err(e) => assert!(matches!(
                e,
                SolveError::MaxIterations { .. } | SolveError::SingularJacobian { .. }
            )),
        }
    }

    #[test]
    fn newton_quadratic_tail() {
        // terminal convergence is quadratic: r_{k+1} <= c r_k^2 with c < 1e4
        let model = ScalarQuadratic;
        let mut s = PartitionedState::zeros(model.layout());
        s.algebraic_mut()[0] = 3.0;
        let opts = NewtonOptions {
            tol: 1e-14,
            ..NewtonOptions::default()
        };
        let info = solve_algebraic(&model, &mut s, &opts).unwrap();
        let n = info.residual_norms.len();
        assert!(n >= 3);
        for w in info.residual_norms[n.saturating_sub(3)..].windows(2) {
            if w[0] > 0.0 && w[1] > 0.0 {
                assert!(w[1] <= 1e4 * w[0] * w[0], "tail not quadratic: {:?}", w);
            }
        }
    }
}
