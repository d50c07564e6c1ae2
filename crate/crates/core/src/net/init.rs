//! Equilibrium construction: a small Newton power flow, device
//! back-initialization from the solved operating point, and a full polish of
//! h_c = 0, f = 0, g = 0.

use num_complex::Complex;
use thiserror::Error;

use crate::algebra::{newton_solve, NewtonOptions};
use crate::error::{ModelError, SolveError};
use crate::layout::{sup_norm, PartitionedState, VarClass};
use crate::model::Model;

use super::{devices, SystemModel};

#[derive(Debug, Clone, Error)]
pub enum InitError {
    #[error("power flow did not converge (mismatch {mismatch:.3e})")]
    PowerFlow { mismatch: f64 },
    #[error("no slack candidate: system has no infinite bus and no machine")]
    NoSlack,
    #[error("machine `{device}` initializes outside its limits: {message}")]
    OutsideLimits { device: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("equilibrium polish failed: {0}")]
    Polish(#[from] SolveError),
}

/// What initialization decided; references filled into the model are echoed
/// here for reporting.
#[derive(Debug, Clone)]
pub struct InitReport {
    pub pf_iterations: usize,
    pub slack_bus: String,
    pub polish_residual: f64,
}

/// Dense Newton power flow over (theta at non-slack, v at PQ buses).
fn solve_power_flow(
    model: &SystemModel,
    slack: usize,
    p_spec: &[f64],
    q_spec: &[f64],
    is_pv: &[bool],
) -> Result<(Vec<f64>, Vec<f64>, usize), InitError> {
    let n = model.buses.len();
    let mut v: Vec<f64> = model.buses.iter().map(|b| b.v0).collect();
    let mut th: Vec<f64> = model.buses.iter().map(|b| b.theta0).collect();

    let unknowns: Vec<(usize, bool)> = (0..n)
        .filter(|&i| i != slack && !model.buses[i].infinite)
        .map(|i| (i, true)) // theta unknowns
        .chain(
            (0..n)
                .filter(|&i| i != slack && !model.buses[i].infinite && !is_pv[i])
                .map(|i| (i, false)), // v unknowns
        )
        .collect();
    if unknowns.is_empty() {
        return Ok((v, th, 0));
    }

    let residual = |v: &[f64], th: &[f64], out: &mut [f64]| {
        let vs: Vec<Complex<f64>> = v
            .iter()
            .zip(th)
            .map(|(&m, &a)| Complex::from_polar(m, a))
            .collect();
        let inj = model.injections_with(&vs, |b| model.initial_tap(b));
        let mut k = 0;
        for &(i, is_theta) in &unknowns {
            out[k] = if is_theta {
                p_spec[i] - inj[i].re
            } else {
                q_spec[i] - inj[i].im
            };
            k += 1;
        }
    };

    let dim = unknowns.len();
    let mut r = vec![0.0; dim];
    residual(&v, &th, &mut r);
    let mut mismatch = sup_norm(&r);
    for iter in 0..50 {
        if mismatch < 1e-11 {
            return Ok((v, th, iter));
        }
        // forward-difference Jacobian; the power flow is only a starting
        // point, the full polish below sharpens everything
        let mut jac = nalgebra::DMatrix::zeros(dim, dim);
        let mut pert = vec![0.0; dim];
        for (col, &(i, is_theta)) in unknowns.iter().enumerate() {
            let h = 1e-7;
            let (mut vp, mut thp) = (v.clone(), th.clone());
            if is_theta {
                thp[i] += h;
            } else {
                vp[i] += h;
            }
            residual(&vp, &thp, &mut pert);
            for row in 0..dim {
                jac[(row, col)] = (pert[row] - r[row]) / h;
            }
        }
        let rhs = nalgebra::DVector::from_iterator(dim, r.iter().map(|x| -x));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(InitError::PowerFlow { mismatch })?;
        for (k, &(i, is_theta)) in unknowns.iter().enumerate() {
            if is_theta {
                th[i] += step[k];
            } else {
                v[i] += step[k];
            }
        }
        residual(&v, &th, &mut r);
        mismatch = sup_norm(&r);
    }
    if mismatch < 1e-9 {
        Ok((v, th, 50))
    } else {
        Err(InitError::PowerFlow { mismatch })
    }
}

/// Build the pre-contingency equilibrium of the complete model.
///
/// Fills in the reference parameters that were left unspecified (mechanical
/// power, field voltage, regulator reference, governor order, load reference
/// voltage) so that the solved operating point is exactly an equilibrium.
pub fn initialize_equilibrium(
    model: &mut SystemModel,
) -> Result<(PartitionedState, InitReport), InitError> {
    let n = model.buses.len();

    // slack: first infinite bus, otherwise the first machine's bus
    let slack = model
        .buses
        .iter()
        .position(|b| b.infinite)
        .or_else(|| model.gen_bus.first().copied())
        .ok_or(InitError::NoSlack)?;

    let mut is_pv = vec![false; n];
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for (k, &bus) in model.gen_bus.iter().enumerate() {
        is_pv[bus] = true;
        p_spec[bus] += model.gens[k].p0;
    }
    for (k, &bus) in model.load_bus.iter().enumerate() {
        p_spec[bus] -= model.loads[k].p;
        q_spec[bus] -= model.loads[k].q;
    }
    for (k, &bus) in model.erl_bus.iter().enumerate() {
        let e = &model.erls[k];
        p_spec[bus] -= e.k_p / 100.0 * e.p_l0;
        q_spec[bus] -= e.k_q / 100.0 * e.q_l0;
    }

    let (v, th, pf_iterations) = solve_power_flow(model, slack, &p_spec, &q_spec, &is_pv)?;

    // injections at the solution give each machine its P, Q
    let vs: Vec<Complex<f64>> = v
        .iter()
        .zip(&th)
        .map(|(&m, &a)| Complex::from_polar(m, a))
        .collect();
    let inj = model.injections_with(&vs, |b| model.initial_tap(b));

    let layout = model.layout().clone();
    let mut s = PartitionedState::zeros(&layout);

    // buses
    for i in 0..n {
        let o = layout.offset_of(VarClass::Algebraic) + model.bus_y[i];
        s.set(o, v[i]);
        s.set(o + 1, th[i]);
    }
    // taps
    for k in 0..model.ltcs.len() {
        let o = layout.offset_of(VarClass::SlowDiscrete) + k;
        s.set(o, model.ltcs[k].m0);
    }

    // machines: standard two-axis back-initialization from terminal P, Q, V
    for k in 0..model.gens.len() {
        let bus = model.gen_bus[k];
        let mut p_term = inj[bus].re;
        let mut q_term = inj[bus].im;
        for (j, &b) in model.load_bus.iter().enumerate() {
            if b == bus {
                p_term += model.loads[j].p;
                q_term += model.loads[j].q;
            }
        }
        for (j, &b) in model.erl_bus.iter().enumerate() {
            if b == bus {
                let e = &model.erls[j];
                p_term += e.k_p / 100.0 * e.p_l0;
                q_term += e.k_q / 100.0 * e.q_l0;
            }
        }
        let g = model.gens[k].clone();
        let vt = vs[bus];
        let current = (Complex::new(p_term, q_term) / vt).conj();
        let e_behind_xq = vt + Complex::new(g.r_a, g.x_q) * current;
        let delta = e_behind_xq.arg();
        // rotate terminal quantities into the machine frame
        let rot = Complex::new(0.0, 1.0) * (-Complex::new(0.0, delta)).exp();
        let vdq = rot * vt;
        let idq = rot * current;
        let (v_d, v_q) = (vdq.re, vdq.im);
        let (i_d, i_q) = (idq.re, idq.im);
        let e_q = v_q + g.r_a * i_q + g.x_d_prime * i_d;
        let e_d = v_d + g.r_a * i_d - g.x_q_prime * i_q;
        let v_f = devices::saturation(g.a_s, g.b_s, e_q) + (g.x_d - g.x_d_prime) * i_d;
        let p_e = (v_q + g.r_a * i_q) * i_q + (v_d + g.r_a * i_d) * i_d;
        let p_m = p_e + g.d; // omega = 1 at equilibrium

        let x = layout.offset_of(VarClass::Fast) + model.gen_x[k];
        s.set(x, delta);
        s.set(x + 1, 1.0);
        s.set(x + 2, e_q);
        s.set(x + 3, e_d);
        let y = layout.offset_of(VarClass::Algebraic) + model.gen_y[k];
        s.set(y, p_term);
        s.set(y + 1, q_term);
        s.set(y + 2, p_m);
        s.set(y + 3, v_f);

        model.gens[k].p0 = p_term;
        if model.gen_tg[k].is_none() && model.gens[k].p_m0.is_none() {
            model.gens[k].p_m0 = Some(p_m);
        }
        if model.gen_avr[k].is_none() && model.gens[k].v_f0.is_none() {
            model.gens[k].v_f0 = Some(v_f);
        }

        if let Some(a) = model.gen_avr[k] {
            let avr = model.avrs[a].clone();
            let s_e = avr.a_e * (avr.b_e * v_f.abs()).exp();
            let v_r = v_f * (avr.k_e + s_e);
            if v_r < avr.v_r_min || v_r > avr.v_r_max {
                return Err(InitError::OutsideLimits {
                    device: avr.id.clone(),
                    message: format!("initial regulator voltage {v_r:.4} outside limits"),
                });
            }
            let xo = layout.offset_of(VarClass::Fast) + model.avr_x[a];
            s.set(xo, v[bus]); // v_m
            s.set(xo + 1, v_r); // v_r1
            s.set(xo + 2, -avr.k_f / avr.t_f * v_f); // v_r2
            s.set(xo + 3, v_f);
            let v_ref = v[bus] + v_r / avr.k_a;
            s.set(layout.offset_of(VarClass::Algebraic) + model.avr_y[a], v_ref);
            if model.avrs[a].v_ref0.is_none() {
                model.avrs[a].v_ref0 = Some(v_ref);
            }
        }
        if let Some(t) = model.gen_tg[k] {
            let tg = model.tgs[t].clone();
            let p_in = p_m;
            if p_in < tg.p_min || p_in > tg.p_max {
                return Err(InitError::OutsideLimits {
                    device: tg.id.clone(),
                    message: format!("initial turbine power {p_in:.4} outside limits"),
                });
            }
            let z = layout.offset_of(VarClass::SlowContinuous) + model.tg_zc[t];
            s.set(z, p_in);
            s.set(z + 1, (1.0 - tg.t_3 / tg.t_c) * p_in);
            s.set(
                z + 2,
                (1.0 - tg.t_4 / tg.t_5) * ((1.0 - tg.t_3 / tg.t_c) * p_in + tg.t_3 / tg.t_c * p_in),
            );
            s.set(
                layout.offset_of(VarClass::Algebraic) + model.tg_y[t],
                tg.omega_ref0,
            );
            if model.tgs[t].p_order.is_none() {
                // omega = omega_ref0 would add (omega_ref0 - 1)/R; fold it in
                model.tgs[t].p_order = Some(p_in - (tg.omega_ref0 - 1.0) / tg.r);
            }
        }
    }

    // limiters: start at zero output with the measured field current
    for k in 0..model.oxls.len() {
        let gen = model.avr_gen[model.oxl_avr[k]];
        let bus = model.gen_bus[gen];
        let y = layout.offset_of(VarClass::Algebraic) + model.gen_y[gen];
        let i_f = devices::field_current_estimate(
            model.oxls[k].x_q,
            v[bus],
            s.get(y),
            s.get(y + 1),
        );
        s.set(layout.offset_of(VarClass::Algebraic) + model.oxl_y[k], i_f);
        if i_f > model.oxls[k].i_f_lim {
            return Err(InitError::OutsideLimits {
                device: model.oxls[k].id.clone(),
                message: format!(
                    "initial field current {i_f:.4} already beyond limit {}",
                    model.oxls[k].i_f_lim
                ),
            });
        }
    }

    // recovery loads: reference voltage defaults to the solved bus voltage
    for k in 0..model.erls.len() {
        if model.erls[k].v0.is_none() {
            model.erls[k].v0 = Some(v[model.erl_bus[k]]);
        }
    }

    // full polish: h_c = 0 (limiter rows pinned at zero output), f = 0, g = 0
    let s = polish_equilibrium(model, s)?;

    let mut f = vec![0.0; layout.n_fast()];
    model.fast_rhs(&s, &mut f);
    let mut g = vec![0.0; layout.n_algebraic()];
    model.algebraic_residual(&s, &mut g);
    let polish_residual = sup_norm(&f).max(sup_norm(&g));

    Ok((
        s,
        InitReport {
            pf_iterations,
            slack_bus: model.buses[slack].id.clone(),
            polish_residual,
        },
    ))
}

/// Newton polish of the complete equilibrium. Limiter integrator rows are
/// replaced by `v_oxl = 0` pins: their right-hand side is identically zero
/// below the current limit and carries no Jacobian information.
pub fn polish_equilibrium(
    model: &SystemModel,
    mut s: PartitionedState,
) -> Result<PartitionedState, SolveError> {
    let layout = model.layout().clone();
    let n_slow = layout.n_slow();
    let n_fast = layout.n_fast();
    let unknowns: Vec<usize> = layout
        .range_of(VarClass::SlowContinuous)
        .chain(layout.range_of(VarClass::Fast))
        .chain(layout.range_of(VarClass::Algebraic))
        .collect();
    let oxl_rows: Vec<usize> = model.oxl_zc.clone();
    let zc0 = layout.offset_of(VarClass::SlowContinuous);
    let residual = move |p: &PartitionedState, out: &mut [f64]| {
        let (slow, rest) = out.split_at_mut(n_slow);
        let (fast, alg) = rest.split_at_mut(n_fast);
        model.slow_rhs(0.0, p, slow);
        for &r in &oxl_rows {
            slow[r] = p.get(zc0 + r);
        }
        model.fast_rhs(p, fast);
        model.algebraic_residual(p, alg);
    };
    let opts = NewtonOptions {
        tol: 1e-11,
        max_iterations: 50,
        ..NewtonOptions::default()
    };
    newton_solve(&mut s, &unknowns, residual, &opts)?;
    Ok(s)
}
