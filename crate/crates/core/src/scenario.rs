//! Scenario orchestration: pre-contingency equilibrium, contingency
//! application, and runs of the three model views over a scenario, including
//! the long-term -> quasi steady-state handoff.

use thiserror::Error;

use crate::checker::{diagnose, DiagnoseOptions, Diagnosis};
use crate::error::{ModelError, SolveError};
use crate::io::{Contingency, IoError, ScenarioConfig};
use crate::layout::PartitionedState;
use crate::model::TimerState;
use crate::net::{initialize_equilibrium, InitError, SystemModel};
use crate::sim::{Runner, Scheme, SimConfig, Termination, Trajectory};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("initialization failed: {0}")]
    Init(#[from] InitError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("solver error: {0}")]
    Solve(#[from] SolveError),
    #[error("{0}")]
    Unsupported(String),
}

/// A scenario ready to run: equilibrium solved, instantaneous contingencies
/// applied, later ones queued.
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    /// Model before any contingency, references filled by initialization.
    pub pre_model: SystemModel,
    /// Model with the t = 0 contingencies applied.
    pub model: SystemModel,
    /// Pre-contingency equilibrium state.
    pub equilibrium: PartitionedState,
    /// Contingencies with time > 0, sorted.
    pub timed: Vec<Contingency>,
}

impl PreparedScenario {
    pub fn cfg(&self) -> &SimConfig {
        &self.config.sim
    }

    pub fn diagnose_options(&self) -> DiagnoseOptions {
        let checks = &self.config.checks;
        DiagnoseOptions {
            delta: checks.delta,
            omega_tol: checks.omega_tol,
            basin: checks.basin.clone(),
            check_s1: checks.s1,
            check_gamma_s: checks.gamma_s,
            check_initial: checks.initial_attraction,
            check_consistent: checks.consistent_attraction,
            check_omega: checks.omega_limit,
        }
    }
}

/// Validate the config, solve the pre-contingency equilibrium, and apply the
/// instantaneous contingencies.
pub fn prepare(config: &ScenarioConfig) -> Result<PreparedScenario, ScenarioError> {
    let mut pre_model = config.validate()?;
    let (equilibrium, _report) = initialize_equilibrium(&mut pre_model)?;
    let mut model = pre_model.clone();
    let mut timed = Vec::new();
    for c in &config.contingency {
        if c.time == 0.0 {
            model.apply_change(&c.change)?;
        } else {
            timed.push(c.clone());
        }
    }
    timed.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    Ok(PreparedScenario {
        config: config.clone(),
        pre_model,
        model,
        equilibrium,
        timed,
    })
}

fn splice(acc: &mut Trajectory, leg: Trajectory) {
    // the leg's first sample replaces the accumulated last one: same time,
    // post-change values
    if !acc.samples.is_empty() && !leg.samples.is_empty() {
        acc.samples.pop();
        if !acc.gamma_s.is_empty() {
            acc.gamma_s.pop();
        }
    }
    acc.samples.extend(leg.samples);
    acc.events.extend(leg.events);
    acc.gamma_s.extend(leg.gamma_s);
    acc.termination = leg.termination;
}

/// Run one model view over the scenario, applying timed contingencies at
/// their instants (legged integration).
pub fn run_view(prepared: &PreparedScenario, scheme: Scheme) -> Result<Trajectory, ScenarioError> {
    let cfg = prepared.cfg();
    match scheme {
        Scheme::Transient | Scheme::LongTerm => run_legged(
            &prepared.model,
            &prepared.timed,
            scheme,
            0.0,
            cfg.horizon,
            prepared.equilibrium.clone(),
            idle_timers(&prepared.model, scheme),
            cfg,
        )
        .map(|(traj, _, _)| traj),
        Scheme::Qss => {
            let (_lt, qss) = run_qss_with_handoff(prepared)?;
            Ok(qss)
        }
    }
}

fn idle_timers(model: &SystemModel, scheme: Scheme) -> Vec<TimerState> {
    use crate::model::Model;
    match scheme {
        Scheme::Transient => Vec::new(),
        _ => vec![TimerState::Idle; model.layout().n_discrete()],
    }
}

/// Long-term run to the handoff time, then the quasi steady-state run from
/// the projected handoff point with the tap timers carried over. Returns the
/// full long-term trajectory and the QSS trajectory.
pub fn run_qss_with_handoff(
    prepared: &PreparedScenario,
) -> Result<(Trajectory, Trajectory), ScenarioError> {
    let cfg = prepared.cfg();
    if !prepared.timed.is_empty() {
        return Err(ScenarioError::Unsupported(
            "timed contingencies are not supported for quasi steady-state handoff runs".into(),
        ));
    }
    let model = &prepared.model;
    let timers = idle_timers(model, Scheme::LongTerm);
    let mut lt_runner = Runner::new(
        model,
        cfg,
        Scheme::LongTerm,
        0.0,
        prepared.equilibrium.clone(),
        timers,
    )?;
    let early = lt_runner.run_until(cfg.qss_start_time);
    let handoff_state = lt_runner.state.clone();
    let handoff_timers = lt_runner.timers.clone();
    let lt_term = match early {
        Some(term) => term,
        None => lt_runner
            .run_until(cfg.horizon)
            .unwrap_or(Termination::HorizonReached),
    };
    let lt = lt_runner.into_trajectory(lt_term);

    let projected = crate::sim::qss_project(model, &handoff_state, cfg.algebraic_tol)?;
    let mut qss_runner = Runner::new(
        model,
        cfg,
        Scheme::Qss,
        cfg.qss_start_time,
        projected,
        handoff_timers,
    )?;
    let qss_term = qss_runner
        .run_until(cfg.horizon)
        .unwrap_or(Termination::HorizonReached);
    Ok((lt, qss_runner.into_trajectory(qss_term)))
}

/// Diagnose the scenario: both runs plus the premise checks.
pub fn diagnose_scenario(prepared: &PreparedScenario) -> Result<Diagnosis, ScenarioError> {
    if !prepared.timed.is_empty() {
        return Err(ScenarioError::Unsupported(
            "the validity checks assume fixed model maps; timed contingencies are not supported"
                .into(),
        ));
    }
    let opts = prepared.diagnose_options();
    diagnose(
        &prepared.model,
        prepared.equilibrium.clone(),
        prepared.cfg(),
        &opts,
    )
    .map_err(ScenarioError::from)
}

/// Legged integration applying contingencies at their instants.
#[allow(clippy::too_many_arguments)]
pub fn run_legged(
    base: &SystemModel,
    timed: &[Contingency],
    scheme: Scheme,
    t0: f64,
    t_end: f64,
    init: PartitionedState,
    timers: Vec<TimerState>,
    cfg: &SimConfig,
) -> Result<(Trajectory, SystemModel, Vec<TimerState>), ScenarioError> {
    let mut model = base.clone();
    let mut state = init;
    let mut timers = timers;
    let mut acc: Option<Trajectory> = None;
    let mut t = t0;

    let mut boundaries: Vec<(f64, Vec<&Contingency>)> = Vec::new();
    for c in timed {
        if c.time <= t0 || c.time > t_end {
            continue;
        }
        match boundaries.last_mut() {
            Some((bt, list)) if *bt == c.time => list.push(c),
            _ => boundaries.push((c.time, vec![c])),
        }
    }

    let mut leg_ends: Vec<f64> = boundaries.iter().map(|(bt, _)| *bt).collect();
    leg_ends.push(t_end);

    for (k, &leg_end) in leg_ends.iter().enumerate() {
        let mut runner = Runner::new(&model, cfg, scheme, t, state.clone(), timers.clone())?;
        let term = runner.run_until(leg_end);
        state = runner.state.clone();
        timers = runner.timers.clone();
        let finished = term.is_some();
        let leg = runner.into_trajectory(term.unwrap_or(Termination::HorizonReached));
        match &mut acc {
            None => acc = Some(leg),
            Some(a) => splice(a, leg),
        }
        if finished {
            return Ok((acc.unwrap(), model, timers));
        }
        t = leg_end;
        if k < boundaries.len() {
            for c in &boundaries[k].1 {
                model.apply_change(&c.change)?;
            }
        }
    }
    Ok((acc.unwrap(), model, timers))
}
