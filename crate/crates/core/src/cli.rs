//! Command-line front end: simulate, check, compare, basin.
//!
//! Exit codes are part of the contract so scripts can assert outcomes
//! without parsing files: 0 success/valid, 1 usage or configuration error,
//! 2 instability detected by `simulate`, 3 negative verdict from `check` or
//! `compare`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checker::OmegaLimit;
use crate::io;
use crate::regions::{find_transient_sep, sample_basin_slice};
use crate::scenario::{self, PreparedScenario};
use crate::sim::{Scheme, Termination, Trajectory};

#[derive(Parser)]
#[command(name = "qssim", version, about = "Two-timescale stability runs and validity checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads for basin grids and per-event checks.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelView {
    Transient,
    Longterm,
    Qss,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one model view and write trajectory + event CSVs.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        model: ModelView,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both models, verify the validity premises, write the report.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both models and compare trajectories and terminal behavior.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Slow-gap acceptance threshold, p.u.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a 2-D fast-variable slice of a stability region at an event.
    Basin {
        #[arg(long)]
        scenario: PathBuf,
        /// Event index (1-based) or a time in seconds.
        #[arg(long)]
        at_event: String,
        /// Two fast variable names, comma separated.
        #[arg(long)]
        axes: String,
        /// min1,max1,min2,max2
        #[arg(long)]
        bounds: String,
        /// n1,n2 cells.
        #[arg(long)]
        res: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Entry point used by `main` and by tests. Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // usage problems exit 1; --help/--version print and exit 0
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        // a second invocation in-process keeps the first pool; that is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        eprintln!("note: built without the parallel feature; --threads ignored");
    }

    match cli.cmd {
        Cmd::Simulate {
            scenario,
            model,
            out,
        } => cmd_simulate(&scenario, model, &out),
        Cmd::Check { scenario, out } => cmd_check(&scenario, &out),
        Cmd::Compare {
            scenario,
            delta,
            out,
        } => cmd_compare(&scenario, delta, &out),
        Cmd::Basin {
            scenario,
            at_event,
            axes,
            bounds,
            res,
            out,
        } => cmd_basin(&scenario, &at_event, &axes, &bounds, &res, &out),
    }
}

fn load_and_prepare(path: &Path) -> Result<PreparedScenario, String> {
    let config = io::load_scenario(path).map_err(|e| e.to_string())?;
    scenario::prepare(&config).map_err(|e| e.to_string())
}

fn ensure_out(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create `{}`: {e}", dir.display()))
}

fn termination_exit(t: Termination) -> i32 {
    match t {
        Termination::Converged | Termination::HorizonReached => 0,
        Termination::Diverged
        | Termination::Singular
        | Termination::SolverFailure
        | Termination::LimitCycle => 2,
    }
}

fn write_run(
    prepared: &PreparedScenario,
    traj: &Trajectory,
    out: &Path,
    stem: &str,
) -> Result<(), String> {
    use crate::model::Model;
    let layout = prepared.model.layout();
    io::write_trajectory(layout, traj, &out.join(format!("{stem}_trajectory.csv")))
        .map_err(|e| e.to_string())?;
    io::write_events(&traj.events, &out.join(format!("{stem}_events.csv")))
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn cmd_simulate(scenario: &Path, view: ModelView, out: &Path) -> i32 {
    let prepared = match load_and_prepare(scenario) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if let Err(e) = ensure_out(out) {
        return fail(&e);
    }
    let (scheme, stem) = match view {
        ModelView::Transient => (Scheme::Transient, "transient"),
        ModelView::Longterm => (Scheme::LongTerm, "longterm"),
        ModelView::Qss => (Scheme::Qss, "qss"),
    };
    let traj = match scenario::run_view(&prepared, scheme) {
        Ok(t) => t,
        Err(e) => return fail(&e.to_string()),
    };
    if let Err(e) = write_run(&prepared, &traj, out, stem) {
        return fail(&e);
    }
    println!(
        "{stem}: {} samples, {} events, termination {:?}",
        traj.samples.len(),
        traj.events.len(),
        traj.termination
    );
    termination_exit(traj.termination)
}

fn cmd_check(scenario: &Path, out: &Path) -> i32 {
    let prepared = match load_and_prepare(scenario) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if let Err(e) = ensure_out(out) {
        return fail(&e);
    }
    let diagnosis = match scenario::diagnose_scenario(&prepared) {
        Ok(d) => d,
        Err(e) => return fail(&e.to_string()),
    };
    if let Err(e) = io::write_report(&diagnosis.report, &out.join("report.json")) {
        return fail(&e.to_string());
    }
    let _ = write_run(&prepared, &diagnosis.longterm, out, "longterm");
    let _ = write_run(&prepared, &diagnosis.qss, out, "qss");
    if let Some(gaps) = &diagnosis.gaps {
        let _ = std::fs::write(out.join("gaps.csv"), io::gap_csv(gaps));
    }
    println!("verdict: {}", diagnosis.report.overall.as_string());
    match diagnosis.report.overall {
        crate::checker::Overall::Valid => 0,
        crate::checker::Overall::Invalid(_) => 3,
    }
}

fn cmd_compare(scenario: &Path, delta: Option<f64>, out: &Path) -> i32 {
    let mut prepared = match load_and_prepare(scenario) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    // comparison does not need the basin checks
    prepared.config.checks.s1 = false;
    prepared.config.checks.gamma_s = false;
    prepared.config.checks.initial_attraction = false;
    prepared.config.checks.consistent_attraction = false;
    if let Some(d) = delta {
        prepared.config.checks.delta = d;
    }
    if let Err(e) = ensure_out(out) {
        return fail(&e);
    }
    let diagnosis = match scenario::diagnose_scenario(&prepared) {
        Ok(d) => d,
        Err(e) => return fail(&e.to_string()),
    };
    let gap = &diagnosis.report.trajectory_gap;
    if let Some(gaps) = &diagnosis.gaps {
        if let Err(e) = std::fs::write(out.join("gaps.csv"), io::gap_csv(gaps)) {
            return fail(&e.to_string());
        }
    }
    let verdict = serde_json::json!({
        "sup_gap_slow": gap.sup_slow,
        "time_of_sup": gap.time_of_sup,
        "sup_gap_fast": gap.sup_fast,
        "delta": gap.delta,
        "omega_limit": diagnosis.report.omega_limit,
        "pass": gap.within_delta && diagnosis.report.omega_limit == OmegaLimit::SameSep,
    });
    if let Err(e) = std::fs::write(
        out.join("compare.json"),
        serde_json::to_string_pretty(&verdict).unwrap(),
    ) {
        return fail(&e.to_string());
    }
    println!(
        "sup slow gap {:.6e} (delta {:.3e}), omega {:?}",
        gap.sup_slow, gap.delta, diagnosis.report.omega_limit
    );
    if gap.within_delta && diagnosis.report.omega_limit == OmegaLimit::SameSep {
        0
    } else {
        3
    }
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Option<(T, T)> {
    let mut it = s.split(',');
    let a = it.next()?.trim().parse().ok()?;
    let b = it.next()?.trim().parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

fn cmd_basin(
    scenario: &Path,
    at_event: &str,
    axes: &str,
    bounds: &str,
    res: &str,
    out: &Path,
) -> i32 {
    use crate::model::Model;
    let prepared = match load_and_prepare(scenario) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if !prepared.timed.is_empty() {
        return fail("timed contingencies are not supported by basin sampling");
    }
    if let Err(e) = ensure_out(out) {
        return fail(&e);
    }

    let layout = prepared.model.layout();
    let fast_names: Vec<&str> = layout
        .names_of(crate::layout::VarClass::Fast)
        .iter()
        .map(|s| s.as_str())
        .collect();
    let (ax1, ax2) = match parse_pair::<String>(axes) {
        Some(p) => p,
        None => return fail(&format!(
            "--axes expects `var1,var2`; valid fast variables: {}",
            fast_names.join(", ")
        )),
    };
    for ax in [&ax1, &ax2] {
        if layout.fast_index_of(ax).is_err() {
            return fail(&format!(
                "unknown fast variable `{ax}`; valid choices: {}",
                fast_names.join(", ")
            ));
        }
    }
    let bounds: Vec<f64> = bounds
        .split(',')
        .filter_map(|p| p.trim().parse().ok())
        .collect();
    if bounds.len() != 4 {
        return fail("--bounds expects `min1,max1,min2,max2`");
    }
    let (n1, n2) = match parse_pair::<usize>(res) {
        Some(p) => p,
        None => return fail("--res expects `n1,n2`"),
    };

    // run the long-term model and pick the post-jump point
    let traj = match scenario::run_view(&prepared, Scheme::LongTerm) {
        Ok(t) => t,
        Err(e) => return fail(&e.to_string()),
    };
    let marked_state = if let Ok(k) = at_event.parse::<usize>() {
        if k == 0 || k > traj.events.len() {
            return fail(&format!(
                "event index {k} out of range; the run produced {} events",
                traj.events.len()
            ));
        }
        let ev = &traj.events[k - 1];
        traj.sample_at(ev.time).map(|(_, s)| s.clone())
    } else if let Ok(t) = at_event.parse::<f64>() {
        traj.sample_at(t).map(|(_, s)| s.clone())
    } else {
        return fail("--at-event expects an event index or a time in seconds");
    };
    let marked_state = match marked_state {
        Some(s) => s,
        None => return fail("no sample at the requested event"),
    };

    let sep = match find_transient_sep(&prepared.model, &marked_state) {
        Ok(s) => s,
        Err(e) => return fail(&format!("equilibrium solve failed: {e}")),
    };
    let mut grid = match sample_basin_slice(
        &prepared.model,
        prepared.cfg(),
        &prepared.config.checks.basin,
        &sep.state,
        (&ax1, &ax2),
        (bounds[0], bounds[1], bounds[2], bounds[3]),
        (n1, n2),
    ) {
        Ok(g) => g,
        Err(e) => return fail(&e.to_string()),
    };

    let i1 = layout.fast_index_of(&ax1).unwrap();
    let i2 = layout.fast_index_of(&ax2).unwrap();
    let marked_point = (marked_state.fast()[i1], marked_state.fast()[i2]);
    let marked_cell = grid.locate(marked_point);
    grid.marked = Some((marked_point, marked_cell));

    if let Err(e) = io::write_grid(&grid, &out.join("grid.csv")) {
        return fail(&e.to_string());
    }
    let membership = crate::regions::basin_membership(
        &prepared.model,
        prepared.cfg(),
        &prepared.config.checks.basin,
        &marked_state,
        &sep.state,
    );
    let marked = serde_json::json!({
        "axes": [ax1, ax2],
        "point": [marked_point.0, marked_point.1],
        "cell": marked_cell.map(|(i, j)| vec![i, j]),
        "cell_class": marked_cell.map(|(i, j)| grid.class_at(i, j)),
        "membership": membership,
        "sep": [grid.sep_point.0, grid.sep_point.1],
        "sep_cell": grid.sep_cell.map(|(i, j)| vec![i, j]),
    });
    if let Err(e) = std::fs::write(
        out.join("marked.json"),
        serde_json::to_string_pretty(&marked).unwrap(),
    ) {
        return fail(&e.to_string());
    }
    println!(
        "grid {}x{} written; marked point {:?} -> {:?}",
        n1, n2, marked_point, membership
    );
    0
}

fn fail(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    1
}
