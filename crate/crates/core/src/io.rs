//! External formats: scenario configuration (JSON), trajectory and event
//! logs (CSV), basin grids (CSV), and verdict reports (JSON). Writers and
//! parsers round-trip bit-exactly; floats are printed as the shortest
//! decimal that reparses to the same value.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::VerdictReport;
use crate::layout::{Layout, PartitionedState};
use crate::model::DiscreteEvent;
use crate::net::{
    AvrSpec, BranchSpec, BusSpec, ErlSpec, GenSpec, LoadSpec, LtcSpec, NetworkChange, OxlSpec,
    SystemModel, TgSpec,
};
use crate::regions::{BasinQuery, BasinSliceGrid, CellClass};
use crate::sim::{SimConfig, Termination, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {key}: {message}")]
    Validation { key: String, message: String },
    #[error(transparent)]
    Fs(#[from] std::io::Error),
}

/// One scheduled change. The `kind` tag selects the change type; unknown
/// keys are rejected by the change payloads themselves.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Contingency {
    pub time: f64,
    #[serde(flatten)]
    pub change: NetworkChange,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSpec {
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub loads: Vec<LoadSpec>,
    pub gens: Vec<GenSpec>,
    pub avrs: Vec<AvrSpec>,
    pub tgs: Vec<TgSpec>,
    pub oxls: Vec<OxlSpec>,
    pub erls: Vec<ErlSpec>,
    pub ltcs: Vec<LtcSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    pub s1: bool,
    pub gamma_s: bool,
    pub initial_attraction: bool,
    pub consistent_attraction: bool,
    pub omega_limit: bool,
    /// Slow-gap acceptance threshold, p.u.
    pub delta: f64,
    /// Terminal-state agreement tolerance.
    pub omega_tol: f64,
    #[serde(flatten)]
    pub basin: BasinQuery,
}

impl Default for ChecksSpec {
    fn default() -> Self {
        Self {
            s1: true,
            gamma_s: true,
            initial_attraction: true,
            consistent_attraction: true,
            omega_limit: true,
            delta: 1e-2,
            omega_tol: 1e-4,
            basin: BasinQuery::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsSpec {
    /// Default output directory; the command line `--out` overrides it.
    pub dir: Option<String>,
}

/// A complete scenario: the system, what happens to it, how to simulate it,
/// and what to check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub contingency: Vec<Contingency>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default)]
    pub outputs: OutputsSpec,
}

impl ScenarioConfig {
    /// Build the system model (surfacing reference and parameter errors) and
    /// validate cross-field invariants.
    pub fn validate(&self) -> Result<SystemModel, IoError> {
        let model = self.build_model()?;
        self.sim.validate().map_err(|message| IoError::Validation {
            key: "sim".into(),
            message,
        })?;
        for c in &self.contingency {
            if c.time < 0.0 {
                return Err(IoError::Validation {
                    key: "contingency.time".into(),
                    message: "contingency times must be nonnegative".into(),
                });
            }
        }
        Ok(model)
    }

    pub fn build_model(&self) -> Result<SystemModel, IoError> {
        let s = &self.system;
        SystemModel::build(
            s.buses.clone(),
            s.branches.clone(),
            s.loads.clone(),
            s.gens.clone(),
            s.avrs.clone(),
            s.tgs.clone(),
            s.oxls.clone(),
            s.erls.clone(),
            s.ltcs.clone(),
        )
        .map_err(|e| IoError::Validation {
            key: "system".into(),
            message: e.to_string(),
        })
    }
}

/// Parse and validate a scenario document. Defaults are filled in by the
/// deserializer and echoed back on re-serialization.
pub fn load_scenario_str(doc: &str) -> Result<ScenarioConfig, IoError> {
    let cfg: ScenarioConfig = serde_json::from_str(doc).map_err(|e| IoError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, IoError> {
    let doc = fs::read_to_string(path)?;
    load_scenario_str(&doc)
}

fn fmt_f64(v: f64) -> String {
    // `{}` prints the shortest decimal that round-trips for f64
    format!("{v}")
}

/// Trajectory CSV: header `t_s,<name>...` with columns in layout order
/// (slow continuous, discrete, fast, algebraic).
pub fn trajectory_csv(layout: &Layout, traj: &Trajectory) -> String {
    let mut out = String::from("t_s");
    for name in layout.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, s) in &traj.samples {
        out.push_str(&fmt_f64(*t));
        for v in s.flat() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory(layout: &Layout, traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    fs::write(path, trajectory_csv(layout, traj))?;
    Ok(())
}

/// Events CSV: `t_s,device,old,new`.
pub fn events_csv(events: &[DiscreteEvent]) -> String {
    let mut out = String::from("t_s,device,old,new\n");
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(e.time),
            e.device,
            fmt_f64(e.old),
            fmt_f64(e.new)
        );
    }
    out
}

pub fn write_events(events: &[DiscreteEvent], path: &Path) -> Result<(), IoError> {
    fs::write(path, events_csv(events))?;
    Ok(())
}

/// Parse a trajectory CSV back into names, times, and flat rows.
pub fn read_trajectory_csv(doc: &str) -> Result<(Vec<String>, Vec<(f64, Vec<f64>)>), IoError> {
    let mut lines = doc.lines();
    let header = lines.next().ok_or_else(|| IoError::Parse {
        line: 1,
        column: 1,
        message: "empty trajectory file".into(),
    })?;
    let mut cols = header.split(',');
    let t_col = cols.next().unwrap_or_default();
    if t_col != "t_s" {
        return Err(IoError::Parse {
            line: 1,
            column: 1,
            message: format!("expected `t_s` first column, found `{t_col}`"),
        });
    }
    let names: Vec<String> = cols.map(|c| c.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: &str, col: usize| -> Result<f64, IoError> {
            s.parse().map_err(|_| IoError::Parse {
                line: i + 2,
                column: col,
                message: format!("bad float `{s}`"),
            })
        };
        let t = parse(parts.next().unwrap_or_default(), 1)?;
        let mut vals = Vec::with_capacity(names.len());
        for (j, p) in parts.enumerate() {
            vals.push(parse(p, j + 2)?);
        }
        if vals.len() != names.len() {
            return Err(IoError::Parse {
                line: i + 2,
                column: 1,
                message: format!("expected {} values, found {}", names.len(), vals.len()),
            });
        }
        rows.push((t, vals));
    }
    Ok((names, rows))
}

fn class_str(c: CellClass) -> &'static str {
    match c {
        CellClass::Inside => "inside",
        CellClass::Outside => "outside",
        CellClass::Undecided => "undecided",
        CellClass::Singular => "singular",
    }
}

/// Grid CSV: `axis1,axis2,class` rows over cell centers, row-major in the
/// first axis.
pub fn grid_csv(grid: &BasinSliceGrid) -> String {
    let mut out = String::from("axis1,axis2,class\n");
    let (n1, n2) = grid.resolution;
    for i in 0..n1 {
        for j in 0..n2 {
            let (a, b) = grid.cell_center(i, j);
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(a),
                fmt_f64(b),
                class_str(grid.class_at(i, j))
            );
        }
    }
    out
}

pub fn write_grid(grid: &BasinSliceGrid, path: &Path) -> Result<(), IoError> {
    fs::write(path, grid_csv(grid))?;
    Ok(())
}

/// Parse a grid CSV into (axis1, axis2, class) tuples.
pub fn read_grid_csv(doc: &str) -> Result<Vec<(f64, f64, CellClass)>, IoError> {
    let mut lines = doc.lines();
    let header = lines.next().unwrap_or_default();
    if header != "axis1,axis2,class" {
        return Err(IoError::Parse {
            line: 1,
            column: 1,
            message: "expected `axis1,axis2,class` header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(IoError::Parse {
                line: i + 2,
                column: 1,
                message: "expected three columns".into(),
            });
        }
        let bad = |col: usize, msg: String| IoError::Parse {
            line: i + 2,
            column: col,
            message: msg,
        };
        let a: f64 = parts[0]
            .parse()
            .map_err(|_| bad(1, format!("bad float `{}`", parts[0])))?;
        let b: f64 = parts[1]
            .parse()
            .map_err(|_| bad(2, format!("bad float `{}`", parts[1])))?;
        let class = match parts[2] {
            "inside" => CellClass::Inside,
            "outside" => CellClass::Outside,
            "undecided" => CellClass::Undecided,
            "singular" => CellClass::Singular,
            other => return Err(bad(3, format!("unknown class `{other}`"))),
        };
        rows.push((a, b, class));
    }
    Ok(rows)
}

pub fn report_json(report: &VerdictReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization is infallible")
}

pub fn write_report(report: &VerdictReport, path: &Path) -> Result<(), IoError> {
    fs::write(path, report_json(report))?;
    Ok(())
}

pub fn read_report(doc: &str) -> Result<VerdictReport, IoError> {
    serde_json::from_str(doc).map_err(|e| IoError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Gap CSV for model comparisons: `t_s,gap_slow,gap_fast`; fast gaps inside
/// a boundary-layer window print as empty fields.
pub fn gap_csv(gaps: &crate::checker::GapSeries) -> String {
    let mut out = String::from("t_s,gap_slow,gap_fast\n");
    for k in 0..gaps.times.len() {
        let fast = match gaps.fast[k] {
            Some(v) => fmt_f64(v),
            None => String::new(),
        };
        let _ = writeln!(out, "{},{},{}", fmt_f64(gaps.times[k]), fmt_f64(gaps.slow[k]), fast);
    }
    out
}

/// Reconstruct a trajectory from parsed CSV rows (used by round-trip checks
/// and by plotting helpers; termination is not part of the CSV).
pub fn trajectory_from_rows(
    layout: &Layout,
    rows: Vec<(f64, Vec<f64>)>,
    termination: Termination,
) -> Result<Trajectory, IoError> {
    let samples = rows
        .into_iter()
        .map(|(t, flat)| {
            PartitionedState::from_flat(layout, flat)
                .map(|s| (t, s))
                .map_err(|e| IoError::Validation {
                    key: "trajectory".into(),
                    message: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory {
        samples,
        events: Vec::new(),
        termination,
        gamma_s: Vec::new(),
        step: 0.0,
    })
}
