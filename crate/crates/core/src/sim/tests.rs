use super::*;
use crate::fixtures::{LinearFastAlgebraic, SingularSweep, TwoTimescale, VanDerPol};
use crate::layout::Layout;
use crate::model::Model;
use std::sync::OnceLock;

/// x' = -x, closed-form decay.
struct LinearDecay;

impl Model for LinearDecay {
    fn layout(&self) -> &Layout {
        static L: OnceLock<Layout> = OnceLock::new();
        L.get_or_init(|| Layout::new(vec![], vec![], vec!["fix.x".into()], vec![]).unwrap())
    }
    fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        out[0] = -s.fast()[0];
    }
    fn algebraic_residual(&self, _s: &PartitionedState, _out: &mut [f64]) {}
}

fn state_of(model: &dyn Model, f: impl Fn(&mut PartitionedState)) -> PartitionedState {
    let mut s = PartitionedState::zeros(model.layout());
    f(&mut s);
    s
}

#[test]
fn trapezoid_single_step_closed_form() {
    let model = LinearDecay;
    let cfg = SimConfig {
        h_transient: 0.1,
        horizon: 0.1,
        ..SimConfig::default()
    };
    let init = state_of(&model, |s| s.fast_mut()[0] = 1.0);
    let traj = simulate_transient(&model, init, &cfg).unwrap();
    let x1 = traj.samples[1].1.fast()[0];
    // finite-difference Newton resolves the linear step to ~1e-12
    assert!((x1 - (1.0 - 0.05) / (1.0 + 0.05)).abs() < 1e-9);
}

#[test]
fn trapezoid_is_second_order() {
    let model = LinearDecay;
    let exact = (-1.0f64).exp();
    let error_at = |h: f64| {
        let cfg = SimConfig {
            h_transient: h,
            horizon: 1.0,
            ..SimConfig::default()
        };
        let init = state_of(&model, |s| s.fast_mut()[0] = 1.0);
        let traj = simulate_transient(&model, init, &cfg).unwrap();
        (traj.final_state().unwrap().fast()[0] - exact).abs()
    };
    let ratio = error_at(0.05) / error_at(0.025);
    assert!((3.5..=4.5).contains(&ratio), "order ratio {ratio}");
}

#[test]
fn starting_at_the_equilibrium_converges_immediately() {
    let model = LinearFastAlgebraic;
    // z = 4 gives the fast equilibrium (x, y) = (2, 2)
    let init = state_of(&model, |s| {
        s.slow_mut()[0] = 4.0;
        s.fast_mut()[0] = 2.0;
        s.algebraic_mut()[0] = 2.0;
    });
    let cfg = SimConfig {
        h_transient: 0.01,
        horizon: 10.0,
        ..SimConfig::default()
    };
    let traj = simulate_transient(&model, init, &cfg).unwrap();
    assert_eq!(traj.termination, Termination::Converged);
    // constant trajectory
    for (_, s) in &traj.samples {
        assert!((s.fast()[0] - 2.0).abs() < 1e-12);
    }
    // converged after the settle window, not the whole horizon
    assert!(traj.end_time() <= 1.5);
}

#[test]
fn two_timescale_boundary_layer_and_shared_limit() {
    // z' = -z + x, eps x' = -x + z: z + eps x is conserved, both variables
    // meet at c = (z0 + eps x0)/(1 + eps)
    let model = TwoTimescale;
    let eps = 1e-3;
    let cfg = SimConfig {
        h_longterm: 0.001,
        horizon: 5.0,
        epsilon_scale: eps,
        qss_start_time: 0.0,
        ..SimConfig::default()
    };
    let init = state_of(&model, |s| {
        s.slow_mut()[0] = 1.0;
        s.fast_mut()[0] = 0.0;
    });
    let traj = simulate_longterm(&model, init, &cfg).unwrap();

    // fast variable caught up with the slow one by t = 0.01
    let at = traj.interpolate(0.01).unwrap();
    assert!((at[0] - at[1]).abs() < 1e-3, "gap {}", (at[0] - at[1]).abs());

    let c = 1.0 / (1.0 + eps);
    let end = traj.final_state().unwrap();
    assert!((end.slow()[0] - c).abs() < 1e-6);
    assert!((end.fast()[0] - c).abs() < 1e-6);

    // against the closed-form slow solution along the way (the run may
    // converge and stop well before the horizon)
    for &t in &[0.05, 0.5] {
        let z_exact = TwoTimescale::exact_slow(1.0, 0.0, eps, t);
        let z_num = traj.interpolate(t).unwrap()[0];
        assert!((z_num - z_exact).abs() < 1e-6, "t={t}");
    }
}

#[test]
fn qss_of_two_timescale_is_constant() {
    // the reduced model is z' = 0 on the manifold x = z
    let model = TwoTimescale;
    let cfg = SimConfig {
        h_qss: 0.5,
        horizon: 10.0,
        qss_start_time: 0.0,
        ..SimConfig::default()
    };
    let init = state_of(&model, |s| {
        s.slow_mut()[0] = 1.0;
        s.fast_mut()[0] = 0.0; // projected onto x = z at start
    });
    let traj = simulate_qss(&model, init, &cfg).unwrap();
    for (_, s) in &traj.samples {
        assert!((s.slow()[0] - 1.0).abs() < 1e-9);
        assert!((s.fast()[0] - 1.0).abs() < 1e-8);
    }
    assert!(traj.gamma_s.iter().all(|&b| b));
}

#[test]
fn projection_is_idempotent_and_local() {
    let model = LinearFastAlgebraic;
    let on_manifold = state_of(&model, |s| {
        s.slow_mut()[0] = 4.0;
        s.fast_mut()[0] = 2.0;
        s.algebraic_mut()[0] = 2.0;
    });
    let p = qss_project(&model, &on_manifold, 1e-12).unwrap();
    assert!(p.distance(&on_manifold) < 1e-12);

    let mut perturbed = on_manifold.clone();
    perturbed.fast_mut()[0] += 1e-3;
    let q = qss_project(&model, &perturbed, 1e-12).unwrap();
    assert!(q.distance(&on_manifold) < 1e-8);
}

#[test]
fn projection_reports_singularity() {
    // two inconsistent algebraic rows with a rank-1 Jacobian
    struct Degenerate;
    impl Model for Degenerate {
        fn layout(&self) -> &Layout {
            static L: OnceLock<Layout> = OnceLock::new();
            L.get_or_init(|| {
                Layout::new(
                    vec![],
                    vec![],
                    vec![],
                    vec!["fix.y1".into(), "fix.y2".into()],
                )
                .unwrap()
            })
        }
        fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
        fn fast_rhs(&self, _s: &PartitionedState, _out: &mut [f64]) {}
        fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]) {
            let (a, b) = (s.algebraic()[0], s.algebraic()[1]);
            out[0] = a + b - 1.0;
            out[1] = a + b;
        }
    }
    let model = Degenerate;
    let s = PartitionedState::zeros(model.layout());
    let err = qss_project(&model, &s, 1e-10).unwrap_err();
    assert!(matches!(
        err,
        crate::error::SolveError::SingularJacobian { .. }
    ));
}

#[test]
fn qss_terminates_singular_within_one_step_of_crossing() {
    // d g/d y crosses zero at z = 0.52; the sweep starts at z = 0 with
    // dz/dt = 1, so the crossing happens at t = 0.52
    let model = SingularSweep {
        z_star: 0.52,
        level: 2.0,
    };
    let cfg = SimConfig {
        h_qss: 0.05,
        horizon: 2.0,
        qss_start_time: 0.0,
        ..SimConfig::default()
    };
    let init = state_of(&model, |s| {
        s.slow_mut()[0] = 0.0;
        s.fast_mut()[0] = 0.0;
        s.algebraic_mut()[0] = 2.0;
    });
    let traj = simulate_qss(&model, init, &cfg).unwrap();
    assert_eq!(traj.termination, Termination::Singular);
    let t_end = traj.end_time();
    assert!(
        (t_end - 0.52).abs() <= cfg.h_qss + 1e-9,
        "singular at {t_end}, crossing at 0.52"
    );
}

#[test]
fn long_term_without_slow_dynamics_matches_transient() {
    let model = LinearFastAlgebraic; // h_c = 0, no discrete variables
    let init = state_of(&model, |s| {
        s.slow_mut()[0] = 4.0;
        s.fast_mut()[0] = 0.5;
        s.algebraic_mut()[0] = 0.0;
    });
    let cfg = SimConfig {
        h_transient: 0.02,
        h_longterm: 0.02,
        horizon: 8.0,
        ..SimConfig::default()
    };
    let t1 = simulate_transient(&model, init.clone(), &cfg).unwrap();
    let t2 = simulate_longterm(&model, init, &cfg).unwrap();
    assert_eq!(t1.termination, t2.termination);
    assert_eq!(t1.samples.len(), t2.samples.len());
    for ((ta, sa), (tb, sb)) in t1.samples.iter().zip(&t2.samples) {
        assert_eq!(ta, tb);
        assert!(sa.distance(sb) < 1e-12);
    }
}

#[test]
fn oscillator_is_detected_as_limit_cycle() {
    let model = VanDerPol { mu: 1.0 };
    let cfg = SimConfig {
        h_longterm: 0.02,
        horizon: 200.0,
        ..SimConfig::default()
    };
    let init = state_of(&model, |s| {
        s.fast_mut()[0] = 0.3;
        s.fast_mut()[1] = 0.0;
    });
    let traj = simulate_longterm(&model, init, &cfg).unwrap();
    assert_eq!(traj.termination, Termination::LimitCycle);
    assert!(traj.end_time() < 200.0);
}

#[test]
fn diverging_run_stops_at_escape_bound() {
    struct Blowup;
    impl Model for Blowup {
        fn layout(&self) -> &Layout {
            static L: OnceLock<Layout> = OnceLock::new();
            L.get_or_init(|| Layout::new(vec![], vec![], vec!["fix.x".into()], vec![]).unwrap())
        }
        fn slow_rhs(&self, _t: f64, _s: &PartitionedState, _out: &mut [f64]) {}
        fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
            out[0] = s.fast()[0];
        }
        fn algebraic_residual(&self, _s: &PartitionedState, _out: &mut [f64]) {}
    }
    let model = Blowup;
    let cfg = SimConfig {
        h_transient: 0.05,
        horizon: 60.0,
        ..SimConfig::default()
    };
    let init = state_of(&model, |s| s.fast_mut()[0] = 1.0);
    let traj = simulate_transient(&model, init, &cfg).unwrap();
    assert_eq!(traj.termination, Termination::Diverged);
}
