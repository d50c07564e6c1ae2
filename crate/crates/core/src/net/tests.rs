use super::*;
use crate::layout::sup_norm;
use crate::model::{Model, TimerState};

fn bus(id: &str, v0: f64, infinite: bool) -> BusSpec {
    BusSpec {
        id: id.into(),
        v0,
        theta0: 0.0,
        infinite,
    }
}

fn branch(id: &str, from: &str, to: &str, r: f64, x: f64, b: f64) -> BranchSpec {
    BranchSpec {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        r,
        x,
        b,
        tap: 1.0,
        in_service: true,
    }
}

fn test_gen(id: &str, bus: &str, p0: f64) -> GenSpec {
    GenSpec {
        id: id.into(),
        bus: bus.into(),
        omega_b: 2.0 * std::f64::consts::PI * 60.0,
        m: 8.0,
        d: 2.0,
        x_d: 1.8,
        x_d_prime: 0.3,
        x_q: 1.7,
        x_q_prime: 0.45,
        r_a: 0.0,
        t_d0_prime: 7.0,
        t_q0_prime: 0.75,
        k_omega: 0.0,
        k_p: 0.0,
        p0,
        a_s: 0.0,
        b_s: 0.0,
        p_m0: None,
        v_f0: None,
    }
}

fn test_avr(id: &str, gen: &str) -> AvrSpec {
    AvrSpec {
        id: id.into(),
        gen: gen.into(),
        k_a: 40.0,
        t_a: 0.1,
        k_f: 0.06,
        t_f: 0.5,
        k_e: 1.0,
        t_e: 0.4,
        t_r: 0.05,
        a_e: 0.0,
        b_e: 0.0,
        v_r_max: 4.5,
        v_r_min: -4.5,
        v_ref0: None,
    }
}

fn test_tg(id: &str, gen: &str) -> TgSpec {
    TgSpec {
        id: id.into(),
        gen: gen.into(),
        r: 0.05,
        // the damping torque acts at full speed, so the turbine carries
        // p_e + d at the equilibrium; leave headroom
        p_max: 4.0,
        p_min: 0.0,
        t_s: 0.2,
        t_c: 0.45,
        t_3: 0.0,
        t_4: 0.0,
        t_5: 8.0,
        omega_ref0: 1.0,
        p_order: None,
    }
}

fn test_erl(id: &str, bus: &str) -> ErlSpec {
    ErlSpec {
        id: id.into(),
        bus: bus.into(),
        k_p: 100.0,
        k_q: 100.0,
        t_p: 25.0,
        t_q: 25.0,
        alpha_s: 0.0,
        alpha_t: 2.0,
        beta_s: 0.0,
        beta_t: 2.0,
        p_l0: 0.35,
        q_l0: 0.1,
        v0: None,
    }
}

fn test_ltc(id: &str, branch: &str, controlled: &str) -> LtcSpec {
    LtcSpec {
        id: id.into(),
        branch: branch.into(),
        controlled_bus: controlled.into(),
        v0: 1.0,
        d: 0.01,
        delta_m: 0.00625,
        m_min: 0.85,
        m_max: 1.15,
        first_delay: 30.0,
        subsequent_delay: 10.0,
        m0: 1.0,
    }
}

/// Single machine against an infinite bus, with regulator + governor +
/// recovering load + tap changer. Mirrors the packaged success scenario.
pub(crate) fn smib() -> SystemModel {
    SystemModel::build(
        vec![bus("bus1", 1.0, true), bus("bus2", 1.02, false), bus("bus3", 1.0, false)],
        vec![
            branch("line12", "bus1", "bus2", 0.01, 0.25, 0.04),
            branch("xfmr23", "bus2", "bus3", 0.005, 0.12, 0.0),
        ],
        vec![LoadSpec {
            id: "l3".into(),
            bus: "bus3".into(),
            p: 0.2,
            q: 0.05,
        }],
        vec![test_gen("g1", "bus2", 0.7)],
        vec![test_avr("a1", "g1")],
        vec![test_tg("t1", "g1")],
        vec![],
        vec![test_erl("e1", "bus3")],
        vec![test_ltc("ltc1", "xfmr23", "bus3")],
    )
    .unwrap()
}

pub(crate) fn smib_equilibrium() -> (SystemModel, crate::layout::PartitionedState) {
    let mut model = smib();
    let (state, _) = initialize_equilibrium(&mut model).unwrap();
    (model, state)
}

#[test]
fn table_vii_partition_assignment() {
    let model = smib();
    let l = model.layout();
    // slow continuous: governor stages, recovery states
    for n in ["t1.x_g1", "t1.x_g2", "t1.x_g3", "e1.x_p", "e1.x_q"] {
        let i = l.index_of(n).unwrap();
        assert_eq!(l.class_of(i), crate::layout::VarClass::SlowContinuous, "{n}");
    }
    // discrete: the tap
    let i = l.index_of("ltc1.m").unwrap();
    assert_eq!(l.class_of(i), crate::layout::VarClass::SlowDiscrete);
    // fast: machine + regulator states, including the regulator field voltage
    for n in [
        "g1.delta",
        "g1.omega",
        "g1.e_q_prime",
        "g1.e_d_prime",
        "a1.v_m",
        "a1.v_r1",
        "a1.v_r2",
        "a1.v_f",
    ] {
        let i = l.index_of(n).unwrap();
        assert_eq!(l.class_of(i), crate::layout::VarClass::Fast, "{n}");
    }
    // algebraic: couplings and bus pairs, including the machine-side v_f
    for n in [
        "t1.omega_ref",
        "a1.v_ref",
        "g1.p",
        "g1.q",
        "g1.p_m",
        "g1.v_f",
        "bus1.v",
        "bus1.theta",
        "bus3.v",
        "bus3.theta",
    ] {
        let i = l.index_of(n).unwrap();
        assert_eq!(l.class_of(i), crate::layout::VarClass::Algebraic, "{n}");
    }
}

#[test]
fn rotor_angle_rate_is_base_frequency_scaled_slip() {
    let (model, mut s) = smib_equilibrium();
    let l = model.layout().clone();
    let omega_idx = l.index_of("g1.omega").unwrap();
    let delta_rate_row = l.fast_index_of("g1.delta").unwrap();

    // synchronous speed zeroes the angle rate regardless of angle
    let mut f = vec![0.0; l.n_fast()];
    s.set(omega_idx, 1.0);
    s.set(l.index_of("g1.delta").unwrap(), 0.83);
    model.fast_rhs(&s, &mut f);
    assert_eq!(f[delta_rate_row], 0.0);

    // 1 percent overspeed at 60 Hz base
    s.set(omega_idx, 1.01);
    model.fast_rhs(&s, &mut f);
    assert!((f[delta_rate_row] - 3.7699111843077515).abs() < 1e-12);
}

#[test]
fn equilibrium_residuals_vanish() {
    let (model, s) = smib_equilibrium();
    let l = model.layout();
    let mut f = vec![0.0; l.n_fast()];
    model.fast_rhs(&s, &mut f);
    assert!(sup_norm(&f) < 1e-9, "fast residual {}", sup_norm(&f));
    let mut g = vec![0.0; l.n_algebraic()];
    model.algebraic_residual(&s, &mut g);
    assert!(sup_norm(&g) < 1e-8, "algebraic residual {}", sup_norm(&g));
    let mut h = vec![0.0; l.n_slow()];
    model.slow_rhs(0.0, &s, &mut h);
    assert!(sup_norm(&h) < 1e-9, "slow residual {}", sup_norm(&h));
}

#[test]
fn two_bus_balance_is_negated_load() {
    // flat voltages, zero angle difference: no line flow, so the balance
    // residual at the load bus is exactly minus the local load
    let model = SystemModel::build(
        vec![bus("bus1", 1.0, true), bus("bus2", 1.0, false)],
        vec![branch("line", "bus1", "bus2", 0.0, 0.1, 0.0)],
        vec![LoadSpec {
            id: "load2".into(),
            bus: "bus2".into(),
            p: 0.37,
            q: 0.11,
        }],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
    )
    .unwrap();
    let l = model.layout().clone();
    let mut s = crate::layout::PartitionedState::zeros(&l);
    s.set(l.index_of("bus1.v").unwrap(), 1.0);
    s.set(l.index_of("bus2.v").unwrap(), 1.0);
    let mut g = vec![0.0; l.n_algebraic()];
    model.algebraic_residual(&s, &mut g);
    let y0 = l.offset_of(crate::layout::VarClass::Algebraic);
    let p2_row = l.index_of("bus2.v").unwrap() - y0; // P-balance row of bus2
    let q2_row = p2_row + 1;
    assert!((g[p2_row] + 0.37).abs() < 1e-12);
    assert!((g[q2_row] + 0.11).abs() < 1e-12);
}

#[test]
fn admittance_matrix_structure() {
    let model = smib();
    let y = model.admittance_matrix(&[1.0]);
    // symmetric at unit taps
    for i in 0..3 {
        for j in 0..3 {
            assert!((y[(i, j)] - y[(j, i)]).norm() < 1e-14);
        }
    }
    // row sums reduce to the shunts; zero shunts means zero row sums
    let mut no_shunt = smib();
    for b in &mut no_shunt.branches {
        b.b = 0.0;
    }
    let y = no_shunt.admittance_matrix(&[1.0]);
    for i in 0..3 {
        let sum: num_complex::Complex<f64> = (0..3).map(|j| y[(i, j)]).sum();
        assert!(sum.norm() < 1e-12, "row {i} sums to {sum}");
    }
}

#[test]
fn limiter_contribution_to_reference_residual() {
    // with zero limiter output the reference residual is v_ref0 - v_ref
    let mut model = smib();
    model.oxls = vec![OxlSpec {
        id: "o1".into(),
        avr: "a1".into(),
        t_0: 10.0,
        i_f_lim: 5.0,
        k_0: 0.0,
        x_d: 1.8,
        x_q: 1.7,
    }];
    let model = SystemModel::build(
        model.buses.clone(),
        model.branches.clone(),
        model.loads.clone(),
        model.gens.clone(),
        model.avrs.clone(),
        model.tgs.clone(),
        model.oxls.clone(),
        model.erls.clone(),
        model.ltcs.clone(),
    )
    .unwrap();
    let l = model.layout().clone();
    let mut s = crate::layout::PartitionedState::zeros(&l);
    let vref_idx = l.index_of("a1.v_ref").unwrap();
    let y0 = l.offset_of(crate::layout::VarClass::Algebraic);
    s.set(vref_idx, 0.3);
    s.set(l.index_of("o1.v_oxl").unwrap(), 0.0);
    let mut g = vec![0.0; l.n_algebraic()];
    model.algebraic_residual(&s, &mut g);
    // v_ref0 defaults to 1.0 before initialization fills it
    assert!((g[vref_idx - y0] - (1.0 - 0.3)).abs() < 1e-12);
}

#[test]
fn slow_rhs_spec_points() {
    let mut model = smib();
    model.oxls = vec![OxlSpec {
        id: "o1".into(),
        avr: "a1".into(),
        t_0: 10.0,
        i_f_lim: 1.0,
        k_0: 5.0,
        x_d: 1.8,
        x_q: 1.7,
    }];
    let model = SystemModel::build(
        model.buses.clone(),
        model.branches.clone(),
        model.loads.clone(),
        model.gens.clone(),
        model.avrs.clone(),
        model.tgs.clone(),
        model.oxls.clone(),
        model.erls.clone(),
        model.ltcs.clone(),
    )
    .unwrap();
    let l = model.layout().clone();
    let mut s = crate::layout::PartitionedState::zeros(&l);
    let mut h = vec![0.0; l.n_slow()];

    // limiter integrates (i_f - i_f_lim)/t_0 once the delay elapsed
    s.set(l.index_of("o1.i_f").unwrap(), 1.2);
    let voxl_row = l.index_of("o1.v_oxl").unwrap() - l.offset_of(crate::layout::VarClass::SlowContinuous);
    model.slow_rhs(6.0, &s, &mut h);
    assert!((h[voxl_row] - 0.02).abs() < 1e-14);
    // and holds before the delay or under the limit
    model.slow_rhs(4.0, &s, &mut h);
    assert_eq!(h[voxl_row], 0.0);
    s.set(l.index_of("o1.i_f").unwrap(), 0.9);
    model.slow_rhs(6.0, &s, &mut h);
    assert_eq!(h[voxl_row], 0.0);

    // recovering load at reference voltage and zero state is static
    s.set(l.index_of("bus3.v").unwrap(), 1.0); // erl v0 defaults to 1.0 uninitialized
    s.set(l.index_of("e1.x_p").unwrap(), 0.0);
    model.slow_rhs(0.0, &s, &mut h);
    let xp_row = l.index_of("e1.x_p").unwrap() - l.offset_of(crate::layout::VarClass::SlowContinuous);
    assert_eq!(h[xp_row], 0.0);

    // governor first stage at its input is stationary
    let omega_ref = l.index_of("t1.omega_ref").unwrap();
    s.set(omega_ref, 1.0);
    s.set(l.index_of("g1.omega").unwrap(), 1.0);
    // p_order is None until initialization; p_in = 0 then
    s.set(l.index_of("t1.x_g1").unwrap(), 0.0);
    model.slow_rhs(0.0, &s, &mut h);
    let xg1_row = l.index_of("t1.x_g1").unwrap() - l.offset_of(crate::layout::VarClass::SlowContinuous);
    assert_eq!(h[xg1_row], 0.0);
}

#[test]
fn erl_steady_state_recovers_static_characteristic() {
    // solve both recovery equations at an off-reference voltage: the drawn
    // power equals the static characteristic exactly
    let (model, mut s) = smib_equilibrium();
    let l = model.layout().clone();
    let e = model.erls[0].clone();
    let v_ref = e.v0.unwrap();
    let v = 0.96 * v_ref;
    s.set(l.index_of("bus3.v").unwrap(), v);

    // x_p so that x_p' = 0 at this voltage
    let p0 = e.k_p / 100.0 * e.p_l0;
    let q0 = e.k_q / 100.0 * e.q_l0;
    let vr = v / v_ref;
    let x_p = e.t_p * p0 * (vr.powf(e.alpha_s) - vr.powf(e.alpha_t));
    let x_q = e.t_q * q0 * (vr.powf(e.beta_s) - vr.powf(e.beta_t));
    s.set(l.index_of("e1.x_p").unwrap(), x_p);
    s.set(l.index_of("e1.x_q").unwrap(), x_q);

    let mut h = vec![0.0; l.n_slow()];
    model.slow_rhs(0.0, &s, &mut h);
    let zc0 = l.offset_of(crate::layout::VarClass::SlowContinuous);
    assert!(h[l.index_of("e1.x_p").unwrap() - zc0].abs() < 1e-15);
    assert!(h[l.index_of("e1.x_q").unwrap() - zc0].abs() < 1e-15);

    let (p, q) = model.erl_power(0, &s);
    assert!((p - p0 * vr.powf(e.alpha_s)).abs() < 1e-14);
    assert!((q - q0 * vr.powf(e.beta_s)).abs() < 1e-14);
}

#[test]
fn governor_static_gain_is_unity() {
    // cascade with derivatives zero: output equals input power
    let (model, s) = smib_equilibrium();
    let l = model.layout();
    let mut h = vec![0.0; l.n_slow()];
    model.slow_rhs(0.0, &s, &mut h);
    let tg = &model.tgs[0];
    let omega = s.get(l.index_of("g1.omega").unwrap());
    let omega_ref = s.get(l.index_of("t1.omega_ref").unwrap());
    let p_in = (tg.p_order.unwrap() + (omega_ref - omega) / tg.r).clamp(tg.p_min, tg.p_max);
    let p_m = model.tg_output(0, &s);
    assert!((p_m - p_in).abs() < 1e-10);
}

#[test]
fn regulator_voltage_is_clamped() {
    assert_eq!(regulator_clamp(0.5, -1.0, 1.0), 0.5);
    assert_eq!(regulator_clamp(1.7, -1.0, 1.0), 1.0);
    assert_eq!(regulator_clamp(-3.0, -1.0, 1.0), -1.0);
}

#[test]
fn evaluation_is_pure() {
    let (model, s) = smib_equilibrium();
    let l = model.layout();
    let run = || {
        let mut f = vec![0.0; l.n_fast()];
        model.fast_rhs(&s, &mut f);
        let mut g = vec![0.0; l.n_algebraic()];
        model.algebraic_residual(&s, &mut g);
        let mut h = vec![0.0; l.n_slow()];
        model.slow_rhs(3.0, &s, &mut h);
        (f, g, h)
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
}

#[test]
fn machine_rows_match_standalone_equations() {
    // per-device oracle: recompute the machine's four rates from scratch
    // using only its terminal quantities
    let (model, mut s) = smib_equilibrium();
    let l = model.layout().clone();
    // move off equilibrium so the comparison is not trivially zero
    for (i, name) in [
        "g1.delta",
        "g1.omega",
        "g1.e_q_prime",
        "g1.e_d_prime",
        "bus2.v",
        "bus2.theta",
        "g1.p",
        "g1.p_m",
        "g1.v_f",
    ]
    .iter()
    .enumerate()
    {
        let idx = l.index_of(name).unwrap();
        s.set(idx, s.get(idx) + 0.01 * (i as f64 + 1.0));
    }
    let mut f = vec![0.0; l.n_fast()];
    model.fast_rhs(&s, &mut f);

    let g = &model.gens[0];
    let get = |n: &str| s.get(l.index_of(n).unwrap());
    let (delta, omega, e_q, e_d) = (
        get("g1.delta"),
        get("g1.omega"),
        get("g1.e_q_prime"),
        get("g1.e_d_prime"),
    );
    let (v, theta) = (get("bus2.v"), get("bus2.theta"));
    let v_d = v * (delta - theta).sin();
    let v_q = v * (delta - theta).cos();
    let i_d = (e_q - v_q) / g.x_d_prime; // r_a = 0 in this fixture
    let i_q = (v_d - e_d) / g.x_q_prime;
    let p_e = v_q * i_q + v_d * i_d;
    let v_f_star = get("g1.v_f") + g.k_omega * (omega - 1.0) - g.k_p * (get("g1.p") - g.p0);

    let row = |n: &str| l.fast_index_of(n).unwrap();
    assert!((f[row("g1.delta")] - g.omega_b * (omega - 1.0)).abs() < 1e-12);
    assert!(
        (f[row("g1.omega")] - (get("g1.p_m") - p_e - g.d * omega) / g.m).abs() < 1e-12
    );
    assert!(
        (f[row("g1.e_q_prime")] - (-e_q - (g.x_d - g.x_d_prime) * i_d + v_f_star) / g.t_d0_prime)
            .abs()
            < 1e-12
    );
    assert!(
        (f[row("g1.e_d_prime")] - (-e_d + (g.x_q - g.x_q_prime) * i_q) / g.t_q0_prime).abs()
            < 1e-12
    );
}

#[test]
fn tap_update_follows_deadband_rules() {
    let model = smib();
    let l = model.layout().clone();
    let mut s = crate::layout::PartitionedState::zeros(&l);
    let v3 = l.index_of("bus3.v").unwrap();
    let m_idx = l.index_of("ltc1.m").unwrap();
    s.set(m_idx, 1.0);

    // high voltage, delay elapsed: tap steps up by exactly delta_m
    s.set(v3, 1.02);
    let mut timers = vec![TimerState::Armed {
        since: 0.0,
        first: true,
    }];
    let (zd, events) = model.discrete_update(31.0, &s, &mut timers);
    assert!((zd[0] - 1.00625).abs() < 1e-15);
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].device, "ltc1");

    // inside the deadband: no change, timer disarms
    s.set(v3, 1.005);
    let mut timers = vec![TimerState::Armed {
        since: 0.0,
        first: true,
    }];
    let (zd, events) = model.discrete_update(31.0, &s, &mut timers);
    assert_eq!(zd[0], 1.0);
    assert!(events.is_empty());
    assert_eq!(timers[0], TimerState::Idle);

    // at the lower limit: saturated, no event
    s.set(v3, 0.95);
    s.set(m_idx, 0.85);
    let mut timers = vec![TimerState::Armed {
        since: 0.0,
        first: true,
    }];
    let (zd, events) = model.discrete_update(31.0, &s, &mut timers);
    assert_eq!(zd[0], 0.85);
    assert!(events.is_empty());

    // low voltage taps down (symmetric deadband reading)
    s.set(v3, 0.97);
    s.set(m_idx, 1.0);
    let mut timers = vec![TimerState::Armed {
        since: 0.0,
        first: true,
    }];
    let (zd, events) = model.discrete_update(31.0, &s, &mut timers);
    assert!((zd[0] - 0.99375).abs() < 1e-15);
    assert_eq!(events.len(), 1);

    // before the delay has elapsed nothing fires
    s.set(v3, 1.02);
    let mut timers = vec![TimerState::Armed {
        since: 0.0,
        first: true,
    }];
    let (_, events) = model.discrete_update(10.0, &s, &mut timers);
    assert!(events.is_empty());
}

#[test]
fn field_current_estimate_matches_formula() {
    let v: f64 = 1.03;
    let p = 0.9;
    let q = 0.3;
    let x_q = 1.7;
    let gp = x_q * p / v;
    let gq = x_q * q / v;
    let expect = ((v + gq) * (v + gq) + gp * gp).sqrt();
    assert!((field_current_estimate(x_q, v, p, q) - expect).abs() < 1e-15);
}

#[test]
fn build_validates_references_and_limits() {
    // branch to a missing bus
    let err = SystemModel::build(
        vec![bus("bus1", 1.0, true)],
        vec![branch("line", "bus1", "nowhere", 0.0, 0.1, 0.0)],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
    )
    .unwrap_err();
    assert!(matches!(err, ModelError::UnknownReference { .. }));

    // inverted tap limits
    let mut ltc = test_ltc("ltc1", "line", "bus2");
    ltc.m_min = 1.2;
    ltc.m_max = 0.9;
    let err = SystemModel::build(
        vec![bus("bus1", 1.0, true), bus("bus2", 1.0, false)],
        vec![branch("line", "bus1", "bus2", 0.0, 0.1, 0.0)],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![ltc],
    )
    .unwrap_err();
    assert!(matches!(err, ModelError::InvalidParameter { .. }));
}
