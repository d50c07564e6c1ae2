//! Transient-model equilibria and their stability regions: point membership
//! decided by simulation, and 2-D fast-variable slices of the basin.

use serde::{Deserialize, Serialize};

use crate::algebra::{
    classify_point, jacobian_blocks, solve_algebraic, solve_equilibrium_fast, ManifoldPointClass,
    NewtonOptions,
};
use crate::error::SolveError;
use crate::layout::{sup_norm, PartitionedState};
use crate::model::Model;
use crate::sim::{Runner, Scheme, SimConfig, Termination};

/// Bounds for one basin-membership simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasinQuery {
    /// Transient horizon, s.
    pub horizon: f64,
    /// Convergence radius around the equilibrium, p.u.
    pub rho: f64,
    /// State sup-norm beyond which the trajectory has escaped.
    pub escape: f64,
}

impl Default for BasinQuery {
    fn default() -> Self {
        Self {
            horizon: 60.0,
            rho: 1e-4,
            escape: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Inside,
    Outside,
    Undecided,
}

/// Per-cell classification of a basin slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellClass {
    Inside,
    Outside,
    Undecided,
    Singular,
}

/// A transient-model equilibrium together with its classification.
#[derive(Debug, Clone)]
pub struct TransientSep {
    pub state: PartitionedState,
    pub class: ManifoldPointClass,
}

impl TransientSep {
    pub fn is_stable(&self) -> bool {
        self.class.gamma_s_member
    }
}

/// Solve the frozen fast equilibrium near `guess` and classify it. The
/// caller learns from the classification whether the point is a stable
/// equilibrium of its frozen transient model.
pub fn find_transient_sep(
    model: &dyn Model,
    guess: &PartitionedState,
) -> Result<TransientSep, SolveError> {
    let mut state = guess.clone();
    let opts = NewtonOptions::default();
    solve_equilibrium_fast(model, &mut state, &opts)?;
    let blocks = jacobian_blocks(model, &state)?;
    let class = classify_point(&blocks);
    Ok(TransientSep { state, class })
}

/// Decide whether `candidate`'s fast/algebraic part lies in the stability
/// region of `sep` by simulating the frozen transient model.
pub fn basin_membership(
    model: &dyn Model,
    cfg: &SimConfig,
    query: &BasinQuery,
    candidate: &PartitionedState,
    sep: &PartitionedState,
) -> Membership {
    let mut local = cfg.clone();
    local.horizon = query.horizon;
    let mut runner = match Runner::new(
        model,
        &local,
        Scheme::Transient,
        0.0,
        candidate.clone(),
        Vec::new(),
    ) {
        Ok(r) => r.with_escape_bound(query.escape),
        // an inconsistent start that cannot be projected is not attracted
        Err(SolveError::SingularJacobian { .. }) => return Membership::Outside,
        Err(_) => return Membership::Undecided,
    };

    let n_fast = model.layout().n_fast();
    let mut t_end: f64 = 0.0;
    let mut inner_since: Option<f64> = None;
    let term = loop {
        t_end += 1.0;
        if let Some(term) = runner.run_until(t_end.min(query.horizon)) {
            break Some(term);
        }
        // early exits once the trajectory is parked on the equilibrium:
        // either the residual has fully settled, or the state has stayed
        // deep inside the convergence ball long enough that attraction is
        // decided (the contraction zone of a verified stable equilibrium)
        let dist = runner.state.fast_algebraic_distance(sep);
        let mut f = vec![0.0; n_fast];
        model.fast_rhs(&runner.state, &mut f);
        if dist <= query.rho / 10.0 && sup_norm(&f) < SETTLE_F_TOL {
            break Some(Termination::Converged);
        }
        if dist <= query.rho / 10.0 {
            match inner_since {
                None => inner_since = Some(t_end),
                Some(since) if t_end - since >= 5.0 => break Some(Termination::Converged),
                _ => {}
            }
        } else {
            inner_since = None;
        }
        if t_end >= query.horizon {
            break None;
        }
    };

    match term {
        Some(Termination::Converged) => {
            let dist = runner.state.fast_algebraic_distance(sep);
            if dist <= query.rho {
                Membership::Inside
            } else if dist > 10.0 * query.rho {
                Membership::Outside
            } else {
                Membership::Undecided
            }
        }
        Some(Termination::Diverged) | Some(Termination::Singular) => Membership::Outside,
        Some(Termination::LimitCycle) | Some(Termination::SolverFailure) => Membership::Outside,
        Some(Termination::HorizonReached) | None => Membership::Undecided,
    }
}

const SETTLE_F_TOL: f64 = 1e-8;

/// A sampled 2-D slice of a stability region in two fast variables.
#[derive(Debug, Clone)]
pub struct BasinSliceGrid {
    pub axis_names: (String, String),
    /// (min1, max1, min2, max2)
    pub bounds: (f64, f64, f64, f64),
    pub resolution: (usize, usize),
    /// Row-major: cell (i, j) = classes[i * resolution.1 + j], i along axis 1.
    pub classes: Vec<CellClass>,
    pub sep_point: (f64, f64),
    pub sep_cell: Option<(usize, usize)>,
    /// A marked query point (e.g. the post-jump state) and its cell.
    pub marked: Option<((f64, f64), Option<(usize, usize)>)>,
}

impl BasinSliceGrid {
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let (min1, max1, min2, max2) = self.bounds;
        let (n1, n2) = self.resolution;
        (
            min1 + (i as f64 + 0.5) * (max1 - min1) / n1 as f64,
            min2 + (j as f64 + 0.5) * (max2 - min2) / n2 as f64,
        )
    }

    pub fn locate(&self, p: (f64, f64)) -> Option<(usize, usize)> {
        let (min1, max1, min2, max2) = self.bounds;
        let (n1, n2) = self.resolution;
        if p.0 < min1 || p.0 > max1 || p.1 < min2 || p.1 > max2 {
            return None;
        }
        let i = (((p.0 - min1) / (max1 - min1) * n1 as f64) as usize).min(n1 - 1);
        let j = (((p.1 - min2) / (max2 - min2) * n2 as f64) as usize).min(n2 - 1);
        Some((i, j))
    }

    pub fn class_at(&self, i: usize, j: usize) -> CellClass {
        self.classes[i * self.resolution.1 + j]
    }
}

fn classify_cell(
    model: &dyn Model,
    cfg: &SimConfig,
    query: &BasinQuery,
    sep: &PartitionedState,
    fast_idx: (usize, usize),
    center: (f64, f64),
) -> CellClass {
    let mut start = sep.clone();
    start.fast_mut()[fast_idx.0] = center.0;
    start.fast_mut()[fast_idx.1] = center.1;
    // consistent algebraic start for the displaced fast variables
    let opts = NewtonOptions {
        tol: cfg.algebraic_tol,
        ..NewtonOptions::default()
    };
    match solve_algebraic(model, &mut start, &opts) {
        Ok(_) => {}
        Err(SolveError::SingularJacobian { .. }) => return CellClass::Singular,
        Err(_) => return CellClass::Undecided,
    }
    match basin_membership(model, cfg, query, &start, sep) {
        Membership::Inside => CellClass::Inside,
        Membership::Outside => CellClass::Outside,
        Membership::Undecided => CellClass::Undecided,
    }
}

/// Classify every cell center of a 2-D fast-variable grid around a SEP.
/// Remaining coordinates are held at the SEP values. Cells are evaluated
/// concurrently and merged by index.
pub fn sample_basin_slice(
    model: &dyn Model,
    cfg: &SimConfig,
    query: &BasinQuery,
    sep: &PartitionedState,
    axes: (&str, &str),
    bounds: (f64, f64, f64, f64),
    resolution: (usize, usize),
) -> Result<BasinSliceGrid, SolveError> {
    let layout = model.layout();
    let i1 = layout.fast_index_of(axes.0)?;
    let i2 = layout.fast_index_of(axes.1)?;
    if i1 == i2 {
        return Err(SolveError::Layout(crate::error::LayoutError::DuplicateName(
            axes.0.to_string(),
        )));
    }
    let (n1, n2) = resolution;
    let mut grid = BasinSliceGrid {
        axis_names: (axes.0.to_string(), axes.1.to_string()),
        bounds,
        resolution,
        classes: Vec::with_capacity(n1 * n2),
        sep_point: (sep.fast()[i1], sep.fast()[i2]),
        sep_cell: None,
        marked: None,
    };
    let centers: Vec<(usize, usize)> = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .collect();

    let classify = |&(i, j): &(usize, usize)| {
        let center = cell_center(bounds, resolution, i, j);
        classify_cell(model, cfg, query, sep, (i1, i2), center)
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.classes = centers.par_iter().map(classify).collect();
    }
    #[cfg(not(feature = "parallel"))]
    {
        grid.classes = centers.iter().map(classify).collect();
    }

    grid.sep_cell = grid.locate(grid.sep_point);
    Ok(grid)
}

fn cell_center(
    bounds: (f64, f64, f64, f64),
    resolution: (usize, usize),
    i: usize,
    j: usize,
) -> (f64, f64) {
    let (min1, max1, min2, max2) = bounds;
    let (n1, n2) = resolution;
    (
        min1 + (i as f64 + 0.5) * (max1 - min1) / n1 as f64,
        min2 + (j as f64 + 0.5) * (max2 - min2) / n2 as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::CubicFixture;
    use crate::layout::PartitionedState;

    fn cfg() -> SimConfig {
        SimConfig {
            h_transient: 0.01,
            horizon: 60.0,
            ..SimConfig::default()
        }
    }

    fn point(x: f64) -> PartitionedState {
        let model = CubicFixture;
        let mut s = PartitionedState::zeros(model.layout());
        s.fast_mut()[0] = x;
        s
    }

    #[test]
    fn cubic_roots_and_their_stability() {
        // guesses 0.2, 0.9, -0.9 land on 0, 1, -1; derivative signs decide
        let model = CubicFixture;
        let sep0 = find_transient_sep(&model, &point(0.2)).unwrap();
        assert!(sep0.state.fast()[0].abs() < 1e-9);
        assert!(!sep0.is_stable()); // d/dx at 0 is +1

        let sep1 = find_transient_sep(&model, &point(0.9)).unwrap();
        assert!((sep1.state.fast()[0] - 1.0).abs() < 1e-9);
        assert!(sep1.is_stable()); // d/dx at 1 is -2

        let sep_m1 = find_transient_sep(&model, &point(-0.9)).unwrap();
        assert!((sep_m1.state.fast()[0] + 1.0).abs() < 1e-9);
        assert!(sep_m1.is_stable());
    }

    #[test]
    fn cubic_basin_membership() {
        // basin of +1 is (0, inf): 0.5 inside, -0.5 outside (goes to -1)
        let model = CubicFixture;
        let sep = find_transient_sep(&model, &point(0.9)).unwrap();
        let q = BasinQuery::default();
        let c = cfg();
        assert_eq!(
            basin_membership(&model, &c, &q, &point(0.5), &sep.state),
            Membership::Inside
        );
        assert_eq!(
            basin_membership(&model, &c, &q, &point(-0.5), &sep.state),
            Membership::Outside
        );
        // starting exactly at the equilibrium
        assert_eq!(
            basin_membership(&model, &c, &q, &sep.state, &sep.state),
            Membership::Inside
        );
    }

    #[test]
    fn inside_point_stays_inside_under_small_perturbation() {
        let model = CubicFixture;
        let sep = find_transient_sep(&model, &point(0.9)).unwrap();
        let q = BasinQuery::default();
        let c = cfg();
        let p = point(0.5 + q.rho / 10.0);
        assert_eq!(
            basin_membership(&model, &c, &q, &p, &sep.state),
            Membership::Inside
        );
    }

    #[test]
    fn one_dimensional_sweep_flips_at_separatrix() {
        // classify a line of points across x = 0; membership flips exactly
        // at the unstable equilibrium
        let model = CubicFixture;
        let sep = find_transient_sep(&model, &point(0.9)).unwrap();
        let q = BasinQuery::default();
        let c = cfg();
        let mut last_outside = true;
        let mut flips = 0;
        for k in 0..21 {
            let x = -0.5 + 0.05 * k as f64 + 0.025; // avoid landing on 0
            let m = basin_membership(&model, &c, &q, &point(x), &sep.state);
            let outside = m != Membership::Inside;
            if outside != last_outside {
                flips += 1;
                assert!(
                    x > 0.0 && x - 0.05 < 0.0,
                    "flip away from the separatrix at x = {x}"
                );
            }
            last_outside = outside;
        }
        assert_eq!(flips, 1);
    }
}
