//! Time-domain integration of the three model views: the transient model
//! (fast + algebraic, slow frozen), the complete long-term hybrid model, and
//! the quasi steady-state model (slow dynamics constrained to the fast
//! equilibrium manifold). One implicit-trapezoidal engine drives all three.

use serde::{Deserialize, Serialize};

use crate::algebra::{
    block_matrix, classify_point, jacobian_blocks, newton_solve, solve_algebraic,
    solve_equilibrium_fast, NewtonOptions,
};
use crate::error::SolveError;
use crate::layout::{sup_norm, PartitionedState, VarClass};
use crate::model::{DiscreteEvent, Model, TimerState};

/// Step sizes, tolerances, and timescale knobs for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Transient-model step, s.
    pub h_transient: f64,
    /// Long-term-model step, s.
    pub h_longterm: f64,
    /// Quasi steady-state step, s.
    pub h_qss: f64,
    /// Simulation horizon, s.
    pub horizon: f64,
    /// Newton tolerance inside the integrator.
    pub newton_tol: f64,
    /// Tolerance for pure algebraic solves.
    pub algebraic_tol: f64,
    /// Multiplier on the fast time constants; 1 is the physical system,
    /// smaller values widen the timescale separation.
    pub epsilon_scale: f64,
    /// Time at which the quasi steady-state run is started.
    pub qss_start_time: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            h_transient: 0.01,
            h_longterm: 0.05,
            h_qss: 1.0,
            horizon: 120.0,
            newton_tol: 1e-8,
            algebraic_tol: 1e-10,
            epsilon_scale: 1.0,
            qss_start_time: 30.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.h_transient <= 0.0 || self.h_longterm <= 0.0 || self.h_qss <= 0.0 {
            return Err("step sizes must be positive".into());
        }
        if self.horizon < self.qss_start_time {
            return Err("horizon must not precede qss_start_time".into());
        }
        if self.epsilon_scale <= 0.0 {
            return Err("epsilon_scale must be positive".into());
        }
        Ok(())
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    HorizonReached,
    Converged,
    Diverged,
    Singular,
    SolverFailure,
    LimitCycle,
}

/// A finished run: time-stamped states, the discrete event log, and the
/// termination cause.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<(f64, PartitionedState)>,
    pub events: Vec<DiscreteEvent>,
    pub termination: Termination,
    /// Per-sample stable-manifold membership, recorded by quasi steady-state
    /// runs; empty otherwise.
    pub gamma_s: Vec<bool>,
    /// Nominal step size the run used.
    pub step: f64,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.samples.first().map(|(t, _)| *t).unwrap_or(0.0)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map(|(t, _)| *t).unwrap_or(0.0)
    }

    pub fn final_state(&self) -> Option<&PartitionedState> {
        self.samples.last().map(|(_, s)| s)
    }

    /// Sample at or immediately before `t`.
    pub fn sample_at(&self, t: f64) -> Option<&(f64, PartitionedState)> {
        self.samples.iter().rev().find(|(st, _)| *st <= t + 1e-9)
    }

    /// Linear interpolation of the flat state at time `t` over the sample
    /// grid; `None` outside the covered range.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        if self.samples.is_empty() {
            return None;
        }
        let (t0, _) = self.samples[0];
        let (t1, _) = *self.samples.last().unwrap();
        if t < t0 - 1e-9 || t > t1 + 1e-9 {
            return None;
        }
        let pos = self.samples.partition_point(|(st, _)| *st <= t);
        if pos == 0 {
            return Some(self.samples[0].1.flat().to_vec());
        }
        if pos >= self.samples.len() {
            return Some(self.samples.last().unwrap().1.flat().to_vec());
        }
        let (ta, sa) = &self.samples[pos - 1];
        let (tb, sb) = &self.samples[pos];
        let w = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        Some(
            sa.flat()
                .iter()
                .zip(sb.flat())
                .map(|(a, b)| a + w * (b - a))
                .collect(),
        )
    }
}

/// Which view of the model is being integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Fast + algebraic, slow variables frozen as parameters.
    Transient,
    /// Complete hybrid model.
    LongTerm,
    /// Slow dynamics with f = 0, g = 0 enforced.
    Qss,
}

const MAX_STEP_HALVINGS: u32 = 6; // down to h/64
const SETTLE_TOL: f64 = 1e-8;
const SETTLE_WINDOW: f64 = 1.0;
const LIMIT_CYCLE_TOL: f64 = 1e-4;
const LIMIT_CYCLE_RETURNS: usize = 3;
const LIMIT_CYCLE_MIN_PERIOD: f64 = 0.5;
const LIMIT_CYCLE_LOOKBACK: f64 = 60.0;

/// The integration engine. Construct with [`Runner::new`], drive with
/// [`Runner::run_until`], and finish with [`Runner::into_trajectory`].
pub struct Runner<'a> {
    model: &'a dyn Model,
    cfg: SimConfig,
    scheme: Scheme,
    pub t: f64,
    pub state: PartitionedState,
    pub timers: Vec<TimerState>,
    samples: Vec<(f64, PartitionedState)>,
    events: Vec<DiscreteEvent>,
    gamma_s: Vec<bool>,
    h: f64,
    grid_origin: f64,
    grid_index: u64,
    escape_bound: f64,
    settled_since: Option<f64>,
    prev_block_det: Option<f64>,
    pending_term: Option<Termination>,
    failed_iterate: Option<PartitionedState>,
    anchor: Option<(f64, PartitionedState)>,
    returns: usize,
    outside_anchor: bool,
    unknowns: Vec<usize>,
}

impl<'a> Runner<'a> {
    /// Build a runner at time `t0`. The initial state is projected onto the
    /// scheme's constraint set: algebraic solve for the transient and
    /// long-term views, full fast-equilibrium solve for the QSS view.
    pub fn new(
        model: &'a dyn Model,
        cfg: &SimConfig,
        scheme: Scheme,
        t0: f64,
        init: PartitionedState,
        timers: Vec<TimerState>,
    ) -> Result<Self, SolveError> {
        let layout = model.layout();
        let mut state = init;
        let opts = NewtonOptions {
            tol: cfg.algebraic_tol,
            ..NewtonOptions::default()
        };
        match scheme {
            Scheme::Transient | Scheme::LongTerm => {
                solve_algebraic(model, &mut state, &opts)?;
            }
            Scheme::Qss => {
                solve_equilibrium_fast(model, &mut state, &opts)?;
            }
        }
        let h = match scheme {
            Scheme::Transient => cfg.h_transient,
            Scheme::LongTerm => cfg.h_longterm,
            Scheme::Qss => cfg.h_qss,
        };
        let unknowns: Vec<usize> = match scheme {
            Scheme::Transient => layout
                .range_of(VarClass::Fast)
                .chain(layout.range_of(VarClass::Algebraic))
                .collect(),
            Scheme::LongTerm | Scheme::Qss => layout
                .range_of(VarClass::SlowContinuous)
                .chain(layout.range_of(VarClass::Fast))
                .chain(layout.range_of(VarClass::Algebraic))
                .collect(),
        };
        let mut runner = Self {
            model,
            cfg: cfg.clone(),
            scheme,
            t: t0,
            state: state.clone(),
            timers,
            samples: vec![(t0, state)],
            events: Vec::new(),
            gamma_s: Vec::new(),
            h,
            grid_origin: t0,
            grid_index: 0,
            escape_bound: 1e6,
            settled_since: None,
            prev_block_det: None,
            pending_term: None,
            failed_iterate: None,
            anchor: None,
            returns: 0,
            outside_anchor: false,
            unknowns,
        };
        if scheme == Scheme::Qss {
            runner.pending_term = runner.classify_current();
        }
        Ok(runner)
    }

    /// Override the divergence bound (basin queries use a tighter one).
    pub fn with_escape_bound(mut self, bound: f64) -> Self {
        self.escape_bound = bound;
        self
    }

    fn record_sample(&mut self) {
        self.samples.push((self.t, self.state.clone()));
    }

    /// Classify the current point (QSS only): push its stable-manifold flag
    /// and report a termination if the point is singular or the block
    /// determinant changed sign since the previous accepted point.
    fn classify_current(&mut self) -> Option<Termination> {
        let blocks = match jacobian_blocks(self.model, &self.state) {
            Ok(b) => b,
            Err(_) => {
                self.gamma_s.push(false);
                return Some(Termination::Singular);
            }
        };
        let class = classify_point(&blocks);
        self.gamma_s.push(class.gamma_s_member);
        let det = class.block_det;
        let crossed = match self.prev_block_det {
            Some(prev) if prev.is_finite() && det.is_finite() => {
                prev != 0.0 && det != 0.0 && prev.signum() != det.signum()
            }
            _ => false,
        };
        self.prev_block_det = Some(det);
        if class.singular || crossed {
            Some(Termination::Singular)
        } else {
            None
        }
    }

    /// One trapezoidal step of width `h`. On failure the runner state is
    /// unchanged and the failed iterate is stashed for diagnostics.
    fn try_step(&mut self, h: f64) -> Result<(), SolveError> {
        let model = self.model;
        let layout = model.layout();
        let n_slow = layout.n_slow();
        let n_fast = layout.n_fast();
        let eps = self.cfg.epsilon_scale;
        let t1 = self.t + h;
        let prev = self.state.clone();

        let mut slow0 = vec![0.0; n_slow];
        let mut fast0 = vec![0.0; n_fast];
        model.slow_rhs(self.t, &prev, &mut slow0);
        model.fast_rhs(&prev, &mut fast0);

        let scheme = self.scheme;
        let zc0 = layout.offset_of(VarClass::SlowContinuous);
        let x0 = layout.offset_of(VarClass::Fast);
        let prev_ref = &prev;
        let slow0_ref = &slow0;
        let fast0_ref = &fast0;

        let residual = move |p: &PartitionedState, out: &mut [f64]| {
            let mut cursor = 0;
            if scheme != Scheme::Transient {
                let mut h1 = vec![0.0; n_slow];
                model.slow_rhs(t1, p, &mut h1);
                for i in 0..n_slow {
                    out[cursor + i] = p.get(zc0 + i)
                        - prev_ref.get(zc0 + i)
                        - h / 2.0 * (slow0_ref[i] + h1[i]);
                }
                cursor += n_slow;
            }
            let mut f1 = vec![0.0; n_fast];
            model.fast_rhs(p, &mut f1);
            match scheme {
                Scheme::Qss => {
                    out[cursor..cursor + n_fast].copy_from_slice(&f1);
                }
                _ => {
                    for i in 0..n_fast {
                        out[cursor + i] = p.get(x0 + i)
                            - prev_ref.get(x0 + i)
                            - h / (2.0 * eps) * (fast0_ref[i] + f1[i]);
                    }
                }
            }
            cursor += n_fast;
            model.algebraic_residual(p, &mut out[cursor..]);
        };

        let mut trial = prev.clone();
        let opts = NewtonOptions {
            tol: self.cfg.newton_tol,
            max_iterations: 30,
            min_iterations: 1,
            ..NewtonOptions::default()
        };
        match newton_solve(&mut trial, &self.unknowns, residual, &opts) {
            Ok(_) => {
                self.model.clamp_state(&mut trial);
                self.state = trial;
                self.t = t1;
                Ok(())
            }
            Err(e) => {
                self.failed_iterate = Some(trial);
                Err(e)
            }
        }
    }

    /// Integrate one nominal grid window, halving the internal step on
    /// Newton trouble.
    fn advance(&mut self) -> Result<(), Termination> {
        self.grid_index += 1;
        let window_end = self.grid_origin + self.grid_index as f64 * self.h;
        let mut h = self.h;
        let mut halvings = 0u32;
        while self.t < window_end - 1e-12 {
            let step = (window_end - self.t).min(h);
            match self.try_step(step) {
                Ok(()) => {
                    self.record_sample();
                    if let Some(term) = self.post_accept_checks() {
                        return Err(term);
                    }
                }
                Err(SolveError::SingularJacobian { .. }) => return Err(Termination::Singular),
                Err(SolveError::NonFiniteEntry) => return Err(Termination::Diverged),
                Err(SolveError::MaxIterations { .. }) => {
                    halvings += 1;
                    if halvings > MAX_STEP_HALVINGS {
                        return Err(self.failure_kind());
                    }
                    h /= 2.0;
                }
                Err(SolveError::Layout(_)) => return Err(Termination::SolverFailure),
            }
        }
        Ok(())
    }

    /// Distinguish a plain Newton breakdown from running into the singular
    /// set: inspect the fast/algebraic blocks at the last failed iterate.
    /// Applies to every scheme; a long-term trajectory that collapses onto
    /// the singular surface ends `Singular`, not `SolverFailure`.
    fn failure_kind(&mut self) -> Termination {
        let probe = self
            .failed_iterate
            .take()
            .unwrap_or_else(|| self.state.clone());
        if let Ok(blocks) = jacobian_blocks(self.model, &probe) {
            let class = classify_point(&blocks);
            let crossed = match self.prev_block_det {
                Some(prev) if prev.is_finite() && class.block_det.is_finite() => {
                    prev != 0.0
                        && class.block_det != 0.0
                        && prev.signum() != class.block_det.signum()
                }
                _ => false,
            };
            let near_singular = {
                let m = block_matrix(&blocks);
                let (mn, mx) = crate::algebra::singular_value_extremes(&m);
                mx == 0.0 || mn < 1e-4 * mx
            };
            if class.singular || crossed || near_singular {
                return Termination::Singular;
            }
        }
        Termination::SolverFailure
    }

    /// Divergence, settling, limit-cycle, and (QSS) singularity checks after
    /// an accepted step.
    fn post_accept_checks(&mut self) -> Option<Termination> {
        if sup_norm(self.state.flat()) > self.escape_bound {
            return Some(Termination::Diverged);
        }
        if self.scheme == Scheme::Qss {
            if let Some(term) = self.classify_current() {
                return Some(term);
            }
        }

        let mut f = vec![0.0; self.model.layout().n_fast()];
        self.model.fast_rhs(&self.state, &mut f);
        let f_norm = sup_norm(&f);
        let settled = match self.scheme {
            Scheme::Transient => f_norm < SETTLE_TOL,
            Scheme::LongTerm | Scheme::Qss => {
                let mut hc = vec![0.0; self.model.layout().n_slow()];
                self.model.slow_rhs(self.t, &self.state, &mut hc);
                let slow_ok = sup_norm(&hc) < SETTLE_TOL;
                let fast_ok = self.scheme == Scheme::Qss || f_norm < SETTLE_TOL;
                let timers_idle = self.timers.iter().all(|t| matches!(t, TimerState::Idle));
                slow_ok && fast_ok && timers_idle
            }
        };
        if settled {
            match self.settled_since {
                None => self.settled_since = Some(self.t),
                Some(since) => {
                    if self.t - since >= SETTLE_WINDOW - 1e-9 {
                        return Some(Termination::Converged);
                    }
                }
            }
        } else {
            self.settled_since = None;
        }

        if self.scheme == Scheme::LongTerm && f_norm > LIMIT_CYCLE_TOL {
            match &self.anchor {
                None => {
                    // the current point revisits the earlier path: candidate
                    // loop closed
                    let t_now = self.t;
                    let p = self.state.flat();
                    let n = self.samples.len();
                    let mut hit = false;
                    for w in self.samples[..n - 1].windows(2) {
                        let (ta, sa) = &w[0];
                        let (tb, sb) = &w[1];
                        if t_now - tb < LIMIT_CYCLE_MIN_PERIOD {
                            break;
                        }
                        if t_now - ta > LIMIT_CYCLE_LOOKBACK {
                            continue;
                        }
                        if dist_point_segment(p, sa.flat(), sb.flat()) < LIMIT_CYCLE_TOL {
                            hit = true;
                            break;
                        }
                    }
                    if hit {
                        self.anchor = Some((t_now, self.state.clone()));
                        self.returns = 1;
                        self.outside_anchor = false;
                    }
                }
                Some((_, astate)) => {
                    // distance from the anchor point to the current segment
                    let n = self.samples.len();
                    let d = if n >= 2 {
                        dist_point_segment(
                            astate.flat(),
                            self.samples[n - 2].1.flat(),
                            self.samples[n - 1].1.flat(),
                        )
                    } else {
                        f64::INFINITY
                    };
                    if self.outside_anchor && d < LIMIT_CYCLE_TOL {
                        self.returns += 1;
                        self.outside_anchor = false;
                        if self.returns >= LIMIT_CYCLE_RETURNS {
                            return Some(Termination::LimitCycle);
                        }
                    } else if d > 10.0 * LIMIT_CYCLE_TOL {
                        self.outside_anchor = true;
                    }
                }
            }
        }
        None
    }

    /// Evaluate the tap logic at the current time; apply jumps, re-solve the
    /// constraint set with the new discrete values, and store the post-jump
    /// point as the sample at this time.
    fn process_events(&mut self) -> Option<Termination> {
        let (zd, fired) = self
            .model
            .discrete_update(self.t, &self.state, &mut self.timers);
        if fired.is_empty() {
            return None;
        }
        self.state.discrete_mut().copy_from_slice(&zd);
        self.events.extend(fired);
        let opts = NewtonOptions {
            tol: self.cfg.algebraic_tol,
            ..NewtonOptions::default()
        };
        let result = match self.scheme {
            Scheme::LongTerm => solve_algebraic(self.model, &mut self.state, &opts),
            Scheme::Qss => solve_equilibrium_fast(self.model, &mut self.state, &opts),
            Scheme::Transient => unreachable!("transient runs freeze discrete variables"),
        };
        // determinant continuity does not hold across a parameter jump
        self.prev_block_det = None;
        self.settled_since = None;
        self.anchor = None;
        match result {
            Ok(_) => {
                let last = self.samples.len() - 1;
                self.samples[last] = (self.t, self.state.clone());
                if self.scheme == Scheme::Qss {
                    self.gamma_s.pop();
                    self.classify_current()
                } else {
                    None
                }
            }
            Err(SolveError::SingularJacobian { .. }) => Some(Termination::Singular),
            Err(_) => {
                if self.scheme == Scheme::Qss {
                    self.failed_iterate = Some(self.state.clone());
                    Some(self.failure_kind())
                } else {
                    Some(Termination::SolverFailure)
                }
            }
        }
    }

    /// Integrate until `t_end` or a terminating condition. Returns `None`
    /// when `t_end` was reached without terminating.
    pub fn run_until(&mut self, t_end: f64) -> Option<Termination> {
        if let Some(term) = self.pending_term.take() {
            return Some(term);
        }
        while self.t < t_end - 1e-9 {
            if self.scheme != Scheme::Transient {
                if let Some(term) = self.process_events() {
                    return Some(term);
                }
            }
            match self.advance() {
                Ok(()) => {}
                Err(term) => return Some(term),
            }
        }
        None
    }

    pub fn into_trajectory(self, termination: Termination) -> Trajectory {
        Trajectory {
            samples: self.samples,
            events: self.events,
            termination,
            gamma_s: self.gamma_s,
            step: self.h,
        }
    }

    pub fn samples(&self) -> &[(f64, PartitionedState)] {
        &self.samples
    }
}

/// Simulate the transient model: slow variables frozen exactly.
pub fn simulate_transient(
    model: &dyn Model,
    init: PartitionedState,
    cfg: &SimConfig,
) -> Result<Trajectory, SolveError> {
    let mut r = Runner::new(model, cfg, Scheme::Transient, 0.0, init, Vec::new())?;
    let term = r
        .run_until(cfg.horizon)
        .unwrap_or(Termination::HorizonReached);
    Ok(r.into_trajectory(term))
}

/// Simulate the complete long-term hybrid model.
pub fn simulate_longterm(
    model: &dyn Model,
    init: PartitionedState,
    cfg: &SimConfig,
) -> Result<Trajectory, SolveError> {
    let timers = vec![TimerState::Idle; model.layout().n_discrete()];
    let mut r = Runner::new(model, cfg, Scheme::LongTerm, 0.0, init, timers)?;
    let term = r
        .run_until(cfg.horizon)
        .unwrap_or(Termination::HorizonReached);
    Ok(r.into_trajectory(term))
}

/// Simulate the quasi steady-state model from an on-manifold start.
pub fn simulate_qss(
    model: &dyn Model,
    init: PartitionedState,
    cfg: &SimConfig,
) -> Result<Trajectory, SolveError> {
    let timers = vec![TimerState::Idle; model.layout().n_discrete()];
    let mut r = Runner::new(model, cfg, Scheme::Qss, 0.0, init, timers)?;
    let term = r
        .run_until(cfg.horizon)
        .unwrap_or(Termination::HorizonReached);
    Ok(r.into_trajectory(term))
}

/// Euclidean distance from a point to the segment [a, b].
fn dist_point_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        ap_ab += (p[i] - a[i]) * d;
    }
    let u = if ab2 > 0.0 {
        (ap_ab / ab2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut d2 = 0.0;
    for i in 0..p.len() {
        let q = a[i] + u * (b[i] - a[i]);
        d2 += (p[i] - q) * (p[i] - q);
    }
    d2.sqrt()
}

/// Project a state onto the constraint manifold: slow variables preserved,
/// (x, y) replaced by the frozen fast equilibrium.
pub fn qss_project(
    model: &dyn Model,
    state: &PartitionedState,
    tol: f64,
) -> Result<PartitionedState, SolveError> {
    let mut s = state.clone();
    let opts = NewtonOptions {
        tol,
        ..NewtonOptions::default()
    };
    solve_equilibrium_fast(model, &mut s, &opts)?;
    Ok(s)
}

#[cfg(test)]
mod tests;
