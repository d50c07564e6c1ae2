//! The generic two-timescale hybrid model interface.
//!
//! A model exposes the four residual families of the full dynamic description:
//! slow continuous right-hand sides, a discrete tap update, fast right-hand
//! sides, and algebraic constraints. The power system implementation lives in
//! [`crate::net`]; small synthetic models used by tests and benches live in
//! [`crate::fixtures`].

use crate::layout::{Layout, PartitionedState};

/// Per-discrete-variable timer used by the tap scheduler.
///
/// A timer arms when the controlled quantity leaves its deadband and fires
/// after the device delay. Re-entering the deadband disarms it, so the next
/// excursion pays the first-tap delay again.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimerState {
    Idle,
    Armed { since: f64, first: bool },
}

/// One discrete jump: entry `index` of z_d moved from `old` to `new`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteEvent {
    pub time: f64,
    pub index: usize,
    pub device: String,
    pub old: f64,
    pub new: f64,
}

/// A hybrid two-timescale model over a fixed [`Layout`].
///
/// All evaluation methods are pure: identical inputs produce bit-identical
/// outputs, and implementations must be safe to call concurrently.
pub trait Model: Sync {
    fn layout(&self) -> &Layout;

    /// Slow continuous right-hand sides h_c; `out` has length `n_slow`.
    /// `t` is physical simulation time (the limiter delay needs the clock).
    fn slow_rhs(&self, t: f64, s: &PartitionedState, out: &mut [f64]);

    /// Fast right-hand sides f; `out` has length `n_fast`.
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]);

    /// Algebraic residuals g; `out` has length `n_algebraic`.
    fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]);

    /// Discrete update: examine the state at time `t`, mutate `timers`, and
    /// return the new z_d values together with fired events. The default is
    /// a model with no discrete dynamics.
    fn discrete_update(
        &self,
        _t: f64,
        s: &PartitionedState,
        _timers: &mut [TimerState],
    ) -> (Vec<f64>, Vec<DiscreteEvent>) {
        (s.discrete().to_vec(), Vec::new())
    }

    /// State projection applied after each accepted integration step
    /// (anti-windup clamps). Default: none.
    fn clamp_state(&self, _s: &mut PartitionedState) {}

    /// Largest fast time constant, used to size boundary-layer windows in
    /// trajectory comparisons.
    fn max_fast_time_constant(&self) -> f64 {
        1.0
    }
}

/// Convenience: evaluate fast RHS into a fresh vector.
pub fn fast_rhs_vec(model: &dyn Model, s: &PartitionedState) -> Vec<f64> {
    let mut out = vec![0.0; model.layout().n_fast()];
    model.fast_rhs(s, &mut out);
    out
}

/// Convenience: evaluate algebraic residuals into a fresh vector.
pub fn algebraic_residual_vec(model: &dyn Model, s: &PartitionedState) -> Vec<f64> {
    let mut out = vec![0.0; model.layout().n_algebraic()];
    model.algebraic_residual(s, &mut out);
    out
}

/// Convenience: evaluate slow RHS into a fresh vector.
pub fn slow_rhs_vec(model: &dyn Model, t: f64, s: &PartitionedState) -> Vec<f64> {
    let mut out = vec![0.0; model.layout().n_slow()];
    model.slow_rhs(t, s, &mut out);
    out
}
