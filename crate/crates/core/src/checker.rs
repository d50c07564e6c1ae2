//! Premise checks for the validity of the quasi steady-state reduction and
//! the machinery that turns two runs into a verdict: singularity freedom,
//! stable-manifold membership along the QSS run, attraction of the initial
//! point, attraction after every discrete jump, trajectory gaps, and
//! terminal-behavior comparison.

use serde::{Deserialize, Serialize};

use crate::algebra::{classify_point, jacobian_blocks};
use crate::error::EmptyOverlap;
use crate::layout::{PartitionedState, VarClass};
use crate::model::{Model, TimerState};
use crate::regions::{basin_membership, find_transient_sep, BasinQuery, Membership};
use crate::sim::{qss_project, Runner, Scheme, SimConfig, Termination, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

/// Singularity-freedom check along one or both runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularityCheck {
    pub status: CheckStatus,
    /// First time a sampled point classified singular.
    pub time: Option<f64>,
}

/// Stable-manifold membership along the QSS run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaSCheck {
    pub status: CheckStatus,
    pub first_violation_time: Option<f64>,
    /// Largest (worst) stability margin seen along the run.
    pub worst_margin: Option<f64>,
    /// Sampling step the guarantee is limited to.
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractionCheck {
    pub status: CheckStatus,
    pub membership: Membership,
}

/// Basin answer for the first post-jump point of one discrete event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventAttraction {
    pub time: f64,
    pub device: String,
    pub membership: Membership,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapSummary {
    pub sup_slow: f64,
    pub time_of_sup: f64,
    /// Fast-variable sup gap with boundary-layer windows excluded.
    pub sup_fast: f64,
    pub delta: f64,
    pub within_delta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaLimit {
    SameSep,
    LtDiverged,
    LtLimitCycle,
    QssDiverged,
    Mismatch,
    Undecided,
}

/// Overall verdict; serializes as `QSS-valid` or `QSS-invalid: <condition>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Overall {
    Valid,
    Invalid(String),
}

impl Overall {
    pub fn as_string(&self) -> String {
        match self {
            Overall::Valid => "QSS-valid".to_string(),
            Overall::Invalid(cond) => format!("QSS-invalid: {cond}"),
        }
    }
}

impl Serialize for Overall {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for Overall {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "QSS-valid" {
            Ok(Overall::Valid)
        } else if let Some(cond) = s.strip_prefix("QSS-invalid: ") {
            Ok(Overall::Invalid(cond.to_string()))
        } else {
            Err(serde::de::Error::custom(format!("bad verdict `{s}`")))
        }
    }
}

/// The full verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictReport {
    pub s1_singularity: SingularityCheck,
    pub gamma_s_along_qss: GammaSCheck,
    pub initial_attraction: AttractionCheck,
    pub consistent_attraction: Vec<EventAttraction>,
    pub trajectory_gap: GapSummary,
    pub omega_limit: OmegaLimit,
    pub overall: Overall,
}

/// Time-aligned gap series between two runs.
#[derive(Debug, Clone)]
pub struct GapSeries {
    pub times: Vec<f64>,
    pub slow: Vec<f64>,
    /// `None` inside a boundary-layer window.
    pub fast: Vec<Option<f64>>,
    pub sup_slow: f64,
    pub t_sup_slow: f64,
    pub sup_fast: f64,
}

#[derive(Debug, Clone)]
pub struct DiagnoseOptions {
    pub delta: f64,
    pub omega_tol: f64,
    pub basin: BasinQuery,
    pub check_s1: bool,
    pub check_gamma_s: bool,
    pub check_initial: bool,
    pub check_consistent: bool,
    pub check_omega: bool,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            delta: 1e-2,
            omega_tol: 1e-4,
            basin: BasinQuery::default(),
            check_s1: true,
            check_gamma_s: true,
            check_initial: true,
            check_consistent: true,
            check_omega: true,
        }
    }
}

/// Verdict plus the underlying runs, for export.
#[derive(Debug, Clone)]
pub struct Diagnosis {
    pub report: VerdictReport,
    pub longterm: Trajectory,
    pub qss: Trajectory,
    pub gaps: Option<GapSeries>,
}

/// Classify every sample of a run; first singular sample fails the check.
pub fn check_singularity_along(model: &dyn Model, runs: &[&Trajectory]) -> SingularityCheck {
    let classify_one = |(t, s): &(f64, PartitionedState)| -> Option<f64> {
        let singular = match jacobian_blocks(model, s) {
            Ok(b) => classify_point(&b).singular,
            Err(_) => true,
        };
        singular.then_some(*t)
    };
    for traj in runs {
        #[cfg(feature = "parallel")]
        let first = {
            use rayon::prelude::*;
            traj.samples
                .par_iter()
                .filter_map(classify_one)
                .min_by(|a, b| a.partial_cmp(b).unwrap())
        };
        #[cfg(not(feature = "parallel"))]
        let first = traj.samples.iter().filter_map(classify_one).next();
        if let Some(t) = first {
            return SingularityCheck {
                status: CheckStatus::Fail,
                time: Some(t),
            };
        }
        // a singular termination counts even if no sampled point classified
        if traj.termination == Termination::Singular {
            return SingularityCheck {
                status: CheckStatus::Fail,
                time: Some(traj.end_time()),
            };
        }
    }
    SingularityCheck {
        status: CheckStatus::Pass,
        time: None,
    }
}

/// Stable-manifold membership of every sampled QSS point.
pub fn check_gamma_s_along(model: &dyn Model, qss: &Trajectory) -> GammaSCheck {
    let one = |(t, s): &(f64, PartitionedState)| -> (Option<f64>, Option<f64>) {
        // (violation time, margin)
        match jacobian_blocks(model, s) {
            Ok(b) => {
                let class = classify_point(&b);
                let violation = (!class.gamma_s_member).then_some(*t);
                (violation, class.margin)
            }
            Err(_) => (Some(*t), None),
        }
    };
    #[cfg(feature = "parallel")]
    let results: Vec<(Option<f64>, Option<f64>)> = {
        use rayon::prelude::*;
        qss.samples.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(Option<f64>, Option<f64>)> = qss.samples.iter().map(one).collect();

    let mut worst: Option<f64> = None;
    let mut first_violation = None;
    for (violation, margin) in results {
        if let Some(m) = margin {
            worst = Some(worst.map_or(m, |w: f64| w.max(m)));
        }
        if first_violation.is_none() {
            first_violation = violation;
        }
    }
    GammaSCheck {
        status: if first_violation.is_none() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        first_violation_time: first_violation,
        worst_margin: worst,
        step: qss.step,
    }
}

/// Theorem condition (b) at the handoff instant: the long-term state's
/// fast/algebraic part must lie in the basin of the frozen-equilibrium SEP.
pub fn check_initial_attraction(
    model: &dyn Model,
    cfg: &SimConfig,
    basin: &BasinQuery,
    lt_init: &PartitionedState,
    qss_init: &PartitionedState,
) -> AttractionCheck {
    let membership = match find_transient_sep(model, qss_init) {
        Ok(sep) if sep.is_stable() => basin_membership(model, cfg, basin, lt_init, &sep.state),
        Ok(_) => Membership::Outside,
        Err(_) => Membership::Undecided,
    };
    AttractionCheck {
        status: if membership == Membership::Inside {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        membership,
    }
}

/// Equilibrium solve from the point itself, falling back to a hybrid guess
/// (the point's slow values, a reference state's fast/algebraic values) when
/// the point sits mid-oscillation far from any root.
fn sep_with_fallback(
    model: &dyn Model,
    point: &PartitionedState,
    reference: Option<&PartitionedState>,
) -> Result<crate::regions::TransientSep, crate::error::SolveError> {
    match find_transient_sep(model, point) {
        Ok(sep) => Ok(sep),
        Err(e) => match reference {
            Some(r) => {
                let mut hybrid = r.clone();
                hybrid.slow_mut().copy_from_slice(point.slow());
                hybrid.discrete_mut().copy_from_slice(point.discrete());
                find_transient_sep(model, &hybrid).map_err(|_| e)
            }
            None => Err(e),
        },
    }
}

/// The consistent-attraction condition: for every discrete jump of the
/// long-term run, the first post-jump point must lie inside the stability
/// region of the corresponding frozen transient model.
pub fn check_consistent_attraction(
    model: &dyn Model,
    cfg: &SimConfig,
    basin: &BasinQuery,
    lt: &Trajectory,
    reference: Option<&PartitionedState>,
) -> Vec<EventAttraction> {
    let one = |ev: &crate::model::DiscreteEvent| -> EventAttraction {
        let membership = match lt.sample_at(ev.time) {
            Some((_, post_jump)) => match sep_with_fallback(model, post_jump, reference) {
                Ok(sep) if sep.is_stable() => {
                    basin_membership(model, cfg, basin, post_jump, &sep.state)
                }
                Ok(_) => Membership::Outside,
                Err(_) => Membership::Undecided,
            },
            None => Membership::Undecided,
        };
        EventAttraction {
            time: ev.time,
            device: ev.device.clone(),
            membership,
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        lt.events.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        lt.events.iter().map(one).collect()
    }
}

/// Time-aligned slow and fast gaps over the overlap of two runs. Fast gaps
/// inside a boundary-layer window after the overlap start and after each
/// discrete event are excluded.
pub fn compare_trajectories(
    model: &dyn Model,
    lt: &Trajectory,
    qss: &Trajectory,
    slow_names: Option<&[String]>,
    epsilon_scale: f64,
) -> Result<GapSeries, EmptyOverlap> {
    let layout = model.layout();
    let t0 = lt.start_time().max(qss.start_time());
    let t1 = lt.end_time().min(qss.end_time());
    if t1 <= t0 {
        return Err(EmptyOverlap);
    }

    let slow_idx: Vec<usize> = match slow_names {
        Some(names) => names
            .iter()
            .filter_map(|n| layout.index_of(n).ok())
            .filter(|&i| layout.class_of(i) == VarClass::SlowContinuous)
            .collect(),
        None => layout.range_of(VarClass::SlowContinuous).collect(),
    };
    let fast_idx: Vec<usize> = layout.range_of(VarClass::Fast).collect();

    // align on the coarser grid
    let count_in = |traj: &Trajectory| {
        traj.samples
            .iter()
            .filter(|(t, _)| *t >= t0 - 1e-9 && *t <= t1 + 1e-9)
            .count()
    };
    let grid: Vec<f64> = if count_in(lt) <= count_in(qss) {
        lt.samples
            .iter()
            .map(|(t, _)| *t)
            .filter(|t| *t >= t0 - 1e-9 && *t <= t1 + 1e-9)
            .collect()
    } else {
        qss.samples
            .iter()
            .map(|(t, _)| *t)
            .filter(|t| *t >= t0 - 1e-9 && *t <= t1 + 1e-9)
            .collect()
    };

    let window = 5.0 * model.max_fast_time_constant() * epsilon_scale;
    let mut boundary_starts: Vec<f64> = vec![t0];
    boundary_starts.extend(lt.events.iter().map(|e| e.time));
    boundary_starts.extend(qss.events.iter().map(|e| e.time));
    let in_boundary =
        |t: f64| boundary_starts.iter().any(|&b| t >= b - 1e-9 && t < b + window);

    let mut series = GapSeries {
        times: Vec::with_capacity(grid.len()),
        slow: Vec::with_capacity(grid.len()),
        fast: Vec::with_capacity(grid.len()),
        sup_slow: 0.0,
        t_sup_slow: t0,
        sup_fast: 0.0,
    };
    for &t in &grid {
        let (a, b) = match (lt.interpolate(t), qss.interpolate(t)) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let slow_gap = slow_idx
            .iter()
            .map(|&i| (a[i] - b[i]).abs())
            .fold(0.0, f64::max);
        let fast_gap = if in_boundary(t) {
            None
        } else {
            Some(
                fast_idx
                    .iter()
                    .map(|&i| (a[i] - b[i]).abs())
                    .fold(0.0, f64::max),
            )
        };
        if slow_gap > series.sup_slow {
            series.sup_slow = slow_gap;
            series.t_sup_slow = t;
        }
        if let Some(fg) = fast_gap {
            series.sup_fast = series.sup_fast.max(fg);
        }
        series.times.push(t);
        series.slow.push(slow_gap);
        series.fast.push(fast_gap);
    }
    Ok(series)
}

fn terminal_class(traj: &Trajectory) -> Termination {
    traj.termination
}

/// Compare terminal behaviors: same SEP within `tol` on the slow continuous,
/// fast, and algebraic variables.
pub fn compare_omega_limits(
    layout: &crate::layout::Layout,
    lt: &Trajectory,
    qss: &Trajectory,
    tol: f64,
) -> OmegaLimit {
    use Termination::*;
    match (terminal_class(lt), terminal_class(qss)) {
        (LimitCycle, _) => OmegaLimit::LtLimitCycle,
        (Diverged | Singular | SolverFailure, _) => OmegaLimit::LtDiverged,
        (_, Diverged | Singular | SolverFailure | LimitCycle) => OmegaLimit::QssDiverged,
        (HorizonReached, _) | (_, HorizonReached) => OmegaLimit::Undecided,
        (Converged, Converged) => {
            let (a, b) = match (lt.final_state(), qss.final_state()) {
                (Some(a), Some(b)) => (a, b),
                _ => return OmegaLimit::Undecided,
            };
            let idx = layout
                .range_of(VarClass::SlowContinuous)
                .chain(layout.range_of(VarClass::Fast))
                .chain(layout.range_of(VarClass::Algebraic));
            let gap = idx
                .map(|i| (a.get(i) - b.get(i)).abs())
                .fold(0.0, f64::max);
            if gap <= tol {
                OmegaLimit::SameSep
            } else {
                OmegaLimit::Mismatch
            }
        }
    }
}

fn decide_overall(report: &VerdictReport) -> Overall {
    let any_outside = report
        .consistent_attraction
        .iter()
        .any(|e| e.membership == Membership::Outside);
    if any_outside {
        return Overall::Invalid("consistent-attraction".into());
    }
    if report.s1_singularity.status == CheckStatus::Fail {
        return Overall::Invalid("s1-singularity".into());
    }
    if report.gamma_s_along_qss.status == CheckStatus::Fail {
        return Overall::Invalid("gamma-s".into());
    }
    if report.initial_attraction.status == CheckStatus::Fail {
        return Overall::Invalid(if report.initial_attraction.membership == Membership::Undecided {
            "unverified".into()
        } else {
            "initial-attraction".into()
        });
    }
    if report
        .consistent_attraction
        .iter()
        .any(|e| e.membership == Membership::Undecided)
    {
        return Overall::Invalid("unverified".into());
    }
    match report.omega_limit {
        OmegaLimit::SameSep => Overall::Valid,
        OmegaLimit::Undecided => Overall::Invalid("unverified".into()),
        _ => Overall::Invalid("omega-limit".into()),
    }
}

/// Run the long-term model, hand off to the quasi steady-state model at the
/// configured start time (carrying the tap timers), run all enabled checks,
/// and assemble the verdict. Component failures degrade the verdict instead
/// of aborting.
pub fn diagnose(
    model: &dyn Model,
    init: PartitionedState,
    cfg: &SimConfig,
    opts: &DiagnoseOptions,
) -> Result<Diagnosis, crate::error::SolveError> {
    let timers = vec![TimerState::Idle; model.layout().n_discrete()];
    let mut lt_runner = Runner::new(model, cfg, Scheme::LongTerm, 0.0, init, timers)?;

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

    let (qss, qss_init) = match qss_project(model, &handoff_state, cfg.algebraic_tol) {
        Ok(projected) => {
            match Runner::new(
                model,
                cfg,
                Scheme::Qss,
                cfg.qss_start_time,
                projected.clone(),
                handoff_timers,
            ) {
                Ok(mut qss_runner) => {
                    let term = qss_runner
                        .run_until(cfg.horizon)
                        .unwrap_or(Termination::HorizonReached);
                    (qss_runner.into_trajectory(term), projected)
                }
                Err(e) => {
                    let term = match e {
                        crate::error::SolveError::SingularJacobian { .. } => Termination::Singular,
                        _ => Termination::SolverFailure,
                    };
                    (
                        Trajectory {
                            samples: vec![(cfg.qss_start_time, projected.clone())],
                            events: Vec::new(),
                            termination: term,
                            gamma_s: Vec::new(),
                            step: cfg.h_qss,
                        },
                        projected,
                    )
                }
            }
        }
        Err(e) => {
            let term = match e {
                crate::error::SolveError::SingularJacobian { .. } => Termination::Singular,
                _ => Termination::SolverFailure,
            };
            (
                Trajectory {
                    samples: vec![(cfg.qss_start_time, handoff_state.clone())],
                    events: Vec::new(),
                    termination: term,
                    gamma_s: Vec::new(),
                    step: cfg.h_qss,
                },
                handoff_state.clone(),
            )
        }
    };

    let s1 = if opts.check_s1 {
        check_singularity_along(model, &[&lt, &qss])
    } else {
        SingularityCheck {
            status: CheckStatus::Skipped,
            time: None,
        }
    };
    let gamma_s = if opts.check_gamma_s {
        check_gamma_s_along(model, &qss)
    } else {
        GammaSCheck {
            status: CheckStatus::Skipped,
            first_violation_time: None,
            worst_margin: None,
            step: cfg.h_qss,
        }
    };
    let initial = if opts.check_initial {
        check_initial_attraction(model, cfg, &opts.basin, &handoff_state, &qss_init)
    } else {
        AttractionCheck {
            status: CheckStatus::Skipped,
            membership: Membership::Undecided,
        }
    };
    let consistent = if opts.check_consistent {
        check_consistent_attraction(model, cfg, &opts.basin, &lt, qss.final_state())
    } else {
        Vec::new()
    };

    let gaps = compare_trajectories(model, &lt, &qss, None, cfg.epsilon_scale).ok();
    let gap_summary = match &gaps {
        Some(g) => GapSummary {
            sup_slow: g.sup_slow,
            time_of_sup: g.t_sup_slow,
            sup_fast: g.sup_fast,
            delta: opts.delta,
            within_delta: g.sup_slow <= opts.delta,
        },
        None => GapSummary {
            sup_slow: f64::INFINITY,
            time_of_sup: cfg.qss_start_time,
            sup_fast: f64::INFINITY,
            delta: opts.delta,
            within_delta: false,
        },
    };

    let omega = if opts.check_omega {
        compare_omega_limits(model.layout(), &lt, &qss, opts.omega_tol)
    } else {
        OmegaLimit::Undecided
    };

    let mut report = VerdictReport {
        s1_singularity: s1,
        gamma_s_along_qss: gamma_s,
        initial_attraction: initial,
        consistent_attraction: consistent,
        trajectory_gap: gap_summary,
        omega_limit: omega,
        overall: Overall::Valid,
    };
    report.overall = decide_overall(&report);

    Ok(Diagnosis {
        report,
        longterm: lt,
        qss,
        gaps,
    })
}
