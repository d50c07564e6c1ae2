//! The power system model: network, devices, residual evaluation, and the
//! discrete tap logic.
//!
//! Variable partition:
//! - slow continuous: governor stages x_g1..x_g3, limiter state v_oxl, load
//!   recovery states x_p, x_q
//! - slow discrete: tap ratios m
//! - fast: machine delta, omega, e'_q, e'_d and regulator v_m, v_r1, v_r2, v_f
//! - algebraic: omega_ref, i_f, v_ref, machine p, q, p_m, v_f coupling, and
//!   bus v, theta pairs

pub mod devices;
pub mod init;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::layout::{Layout, PartitionedState, VarClass};
use crate::model::{DiscreteEvent, Model, TimerState};

pub use devices::{
    field_current_estimate, regulator_clamp, saturation, AvrSpec, BranchSpec, BusSpec, ErlSpec,
    GenSpec, LoadSpec, LtcSpec, OxlSpec, TgSpec,
};
pub use init::{initialize_equilibrium, InitError, InitReport};

/// Full system description: specs plus resolved index tables.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub loads: Vec<LoadSpec>,
    pub gens: Vec<GenSpec>,
    pub avrs: Vec<AvrSpec>,
    pub tgs: Vec<TgSpec>,
    pub oxls: Vec<OxlSpec>,
    pub erls: Vec<ErlSpec>,
    pub ltcs: Vec<LtcSpec>,

    layout: Layout,

    // resolved references (indices into the vectors above)
    gen_bus: Vec<usize>,
    avr_gen: Vec<usize>,
    tg_gen: Vec<usize>,
    oxl_avr: Vec<usize>,
    erl_bus: Vec<usize>,
    load_bus: Vec<usize>,
    ltc_bus: Vec<usize>,
    branch_from: Vec<usize>,
    branch_to: Vec<usize>,
    gen_avr: Vec<Option<usize>>,
    gen_tg: Vec<Option<usize>>,
    avr_oxl: Vec<Option<usize>>,
    branch_ltc: Vec<Option<usize>>,

    // partition-relative offsets
    tg_zc: Vec<usize>,
    oxl_zc: Vec<usize>,
    erl_zc: Vec<usize>,
    gen_x: Vec<usize>,
    avr_x: Vec<usize>,
    tg_y: Vec<usize>,
    oxl_y: Vec<usize>,
    avr_y: Vec<usize>,
    gen_y: Vec<usize>,
    bus_y: Vec<usize>,
}

/// A applied network or parameter change (contingency step).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkChange {
    BranchOutage { branch: String },
    LoadStep { load: String, p: f64, q: f64 },
    ParameterSet { target: String, value: f64 },
}

fn resolve(
    list: &[(String, usize)],
    id: &str,
    device: &str,
    kind: &'static str,
) -> Result<usize, ModelError> {
    list.iter()
        .find(|(n, _)| n == id)
        .map(|(_, i)| *i)
        .ok_or_else(|| ModelError::UnknownReference {
            device: device.to_string(),
            kind,
            target: id.to_string(),
        })
}

fn positive(v: f64, device: &str, what: &str) -> Result<(), ModelError> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            device: device.to_string(),
            message: format!("{what} must be positive, got {v}"),
        })
    }
}

impl SystemModel {
    pub fn build(
        buses: Vec<BusSpec>,
        branches: Vec<BranchSpec>,
        loads: Vec<LoadSpec>,
        gens: Vec<GenSpec>,
        avrs: Vec<AvrSpec>,
        tgs: Vec<TgSpec>,
        oxls: Vec<OxlSpec>,
        erls: Vec<ErlSpec>,
        ltcs: Vec<LtcSpec>,
    ) -> Result<Self, ModelError> {
        // global id uniqueness (ids double as layout name prefixes)
        {
            let mut seen = std::collections::HashSet::new();
            let all = buses
                .iter()
                .map(|b| &b.id)
                .chain(branches.iter().map(|b| &b.id))
                .chain(loads.iter().map(|l| &l.id))
                .chain(gens.iter().map(|g| &g.id))
                .chain(avrs.iter().map(|a| &a.id))
                .chain(tgs.iter().map(|t| &t.id))
                .chain(oxls.iter().map(|o| &o.id))
                .chain(erls.iter().map(|e| &e.id))
                .chain(ltcs.iter().map(|l| &l.id));
            for id in all {
                if !seen.insert(id.clone()) {
                    return Err(ModelError::DuplicateId(id.clone()));
                }
            }
        }

        let bus_ids: Vec<(String, usize)> = buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), i))
            .collect();
        let branch_ids: Vec<(String, usize)> = branches
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), i))
            .collect();
        let gen_ids: Vec<(String, usize)> = gens
            .iter()
            .enumerate()
            .map(|(i, g)| (g.id.clone(), i))
            .collect();
        let avr_ids: Vec<(String, usize)> = avrs
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.clone(), i))
            .collect();

        let branch_from = branches
            .iter()
            .map(|b| resolve(&bus_ids, &b.from, &b.id, "bus"))
            .collect::<Result<Vec<_>, _>>()?;
        let branch_to = branches
            .iter()
            .map(|b| resolve(&bus_ids, &b.to, &b.id, "bus"))
            .collect::<Result<Vec<_>, _>>()?;
        let gen_bus = gens
            .iter()
            .map(|g| resolve(&bus_ids, &g.bus, &g.id, "bus"))
            .collect::<Result<Vec<_>, _>>()?;
        let avr_gen = avrs
            .iter()
            .map(|a| resolve(&gen_ids, &a.gen, &a.id, "generator"))
            .collect::<Result<Vec<_>, _>>()?;
        let tg_gen = tgs
            .iter()
            .map(|t| resolve(&gen_ids, &t.gen, &t.id, "generator"))
            .collect::<Result<Vec<_>, _>>()?;
        let oxl_avr = oxls
            .iter()
            .map(|o| resolve(&avr_ids, &o.avr, &o.id, "regulator"))
            .collect::<Result<Vec<_>, _>>()?;
        let erl_bus = erls
            .iter()
            .map(|e| resolve(&bus_ids, &e.bus, &e.id, "bus"))
            .collect::<Result<Vec<_>, _>>()?;
        let load_bus = loads
            .iter()
            .map(|l| resolve(&bus_ids, &l.bus, &l.id, "bus"))
            .collect::<Result<Vec<_>, _>>()?;
        let ltc_branch = ltcs
            .iter()
            .map(|l| resolve(&branch_ids, &l.branch, &l.id, "branch"))
            .collect::<Result<Vec<_>, _>>()?;
        let ltc_bus = ltcs
            .iter()
            .map(|l| resolve(&bus_ids, &l.controlled_bus, &l.id, "bus"))
            .collect::<Result<Vec<_>, _>>()?;

        // one regulator / governor per machine, one limiter per regulator
        let mut gen_avr = vec![None; gens.len()];
        for (i, &g) in avr_gen.iter().enumerate() {
            if gen_avr[g].replace(i).is_some() {
                return Err(ModelError::InvalidParameter {
                    device: avrs[i].id.clone(),
                    message: format!("generator `{}` already has a regulator", gens[g].id),
                });
            }
        }
        let mut gen_tg = vec![None; gens.len()];
        for (i, &g) in tg_gen.iter().enumerate() {
            if gen_tg[g].replace(i).is_some() {
                return Err(ModelError::InvalidParameter {
                    device: tgs[i].id.clone(),
                    message: format!("generator `{}` already has a governor", gens[g].id),
                });
            }
        }
        let mut avr_oxl = vec![None; avrs.len()];
        for (i, &a) in oxl_avr.iter().enumerate() {
            if avr_oxl[a].replace(i).is_some() {
                return Err(ModelError::InvalidParameter {
                    device: oxls[i].id.clone(),
                    message: format!("regulator `{}` already has a limiter", avrs[a].id),
                });
            }
        }
        let mut branch_ltc = vec![None; branches.len()];
        for (i, &b) in ltc_branch.iter().enumerate() {
            if branch_ltc[b].replace(i).is_some() {
                return Err(ModelError::InvalidParameter {
                    device: ltcs[i].id.clone(),
                    message: format!("branch `{}` already has a tap changer", branches[b].id),
                });
            }
        }
        {
            let mut bus_has_gen = vec![false; buses.len()];
            for (k, &b) in gen_bus.iter().enumerate() {
                if bus_has_gen[b] {
                    return Err(ModelError::InvalidParameter {
                        device: gens[k].id.clone(),
                        message: format!("bus `{}` already has a machine", buses[b].id),
                    });
                }
                bus_has_gen[b] = true;
            }
        }

        for b in &branches {
            if b.r == 0.0 && b.x == 0.0 {
                return Err(ModelError::InvalidParameter {
                    device: b.id.clone(),
                    message: "branch needs nonzero series impedance".into(),
                });
            }
            positive(b.tap, &b.id, "tap")?;
        }
        for g in &gens {
            positive(g.m, &g.id, "m")?;
            positive(g.t_d0_prime, &g.id, "t_d0_prime")?;
            positive(g.t_q0_prime, &g.id, "t_q0_prime")?;
            positive(g.x_d_prime, &g.id, "x_d_prime")?;
            positive(g.x_q_prime, &g.id, "x_q_prime")?;
            if g.x_d < g.x_d_prime || g.x_q < g.x_q_prime {
                return Err(ModelError::InvalidParameter {
                    device: g.id.clone(),
                    message: "transient reactances must not exceed synchronous ones".into(),
                });
            }
        }
        for a in &avrs {
            positive(a.t_a, &a.id, "t_a")?;
            positive(a.t_f, &a.id, "t_f")?;
            positive(a.t_e, &a.id, "t_e")?;
            positive(a.t_r, &a.id, "t_r")?;
            if a.v_r_min >= a.v_r_max {
                return Err(ModelError::InvalidParameter {
                    device: a.id.clone(),
                    message: "v_r_min must be below v_r_max".into(),
                });
            }
        }
        for t in &tgs {
            positive(t.r, &t.id, "r")?;
            positive(t.t_s, &t.id, "t_s")?;
            positive(t.t_c, &t.id, "t_c")?;
            positive(t.t_5, &t.id, "t_5")?;
            if t.p_min >= t.p_max {
                return Err(ModelError::InvalidParameter {
                    device: t.id.clone(),
                    message: "p_min must be below p_max".into(),
                });
            }
        }
        for o in &oxls {
            positive(o.t_0, &o.id, "t_0")?;
        }
        for e in &erls {
            positive(e.t_p, &e.id, "t_p")?;
            positive(e.t_q, &e.id, "t_q")?;
        }
        for l in &ltcs {
            positive(l.delta_m, &l.id, "delta_m")?;
            if l.m_min >= l.m_max {
                return Err(ModelError::InvalidParameter {
                    device: l.id.clone(),
                    message: "m_min must be below m_max".into(),
                });
            }
            if l.m0 < l.m_min || l.m0 > l.m_max {
                return Err(ModelError::InvalidParameter {
                    device: l.id.clone(),
                    message: "initial tap outside [m_min, m_max]".into(),
                });
            }
        }

        // layout: z_c = TG | OXL | ERL, z_d = LTC, x = GEN | AVR,
        // y = TG | OXL | AVR | GEN | buses
        let mut slow = Vec::new();
        let mut tg_zc = Vec::new();
        for t in &tgs {
            tg_zc.push(slow.len());
            slow.push(format!("{}.x_g1", t.id));
            slow.push(format!("{}.x_g2", t.id));
            slow.push(format!("{}.x_g3", t.id));
        }
        let mut oxl_zc = Vec::new();
        for o in &oxls {
            oxl_zc.push(slow.len());
            slow.push(format!("{}.v_oxl", o.id));
        }
        let mut erl_zc = Vec::new();
        for e in &erls {
            erl_zc.push(slow.len());
            slow.push(format!("{}.x_p", e.id));
            slow.push(format!("{}.x_q", e.id));
        }
        let discrete: Vec<String> = ltcs.iter().map(|l| format!("{}.m", l.id)).collect();
        let mut fast = Vec::new();
        let mut gen_x = Vec::new();
        for g in &gens {
            gen_x.push(fast.len());
            fast.push(format!("{}.delta", g.id));
            fast.push(format!("{}.omega", g.id));
            fast.push(format!("{}.e_q_prime", g.id));
            fast.push(format!("{}.e_d_prime", g.id));
        }
        let mut avr_x = Vec::new();
        for a in &avrs {
            avr_x.push(fast.len());
            fast.push(format!("{}.v_m", a.id));
            fast.push(format!("{}.v_r1", a.id));
            fast.push(format!("{}.v_r2", a.id));
            fast.push(format!("{}.v_f", a.id));
        }
        let mut alg = Vec::new();
        let mut tg_y = Vec::new();
        for t in &tgs {
            tg_y.push(alg.len());
            alg.push(format!("{}.omega_ref", t.id));
        }
        let mut oxl_y = Vec::new();
        for o in &oxls {
            oxl_y.push(alg.len());
            alg.push(format!("{}.i_f", o.id));
        }
        let mut avr_y = Vec::new();
        for a in &avrs {
            avr_y.push(alg.len());
            alg.push(format!("{}.v_ref", a.id));
        }
        let mut gen_y = Vec::new();
        for g in &gens {
            gen_y.push(alg.len());
            alg.push(format!("{}.p", g.id));
            alg.push(format!("{}.q", g.id));
            alg.push(format!("{}.p_m", g.id));
            alg.push(format!("{}.v_f", g.id));
        }
        let mut bus_y = Vec::new();
        for b in &buses {
            bus_y.push(alg.len());
            alg.push(format!("{}.v", b.id));
            alg.push(format!("{}.theta", b.id));
        }

        let layout = Layout::new(slow, discrete, fast, alg)?;

        Ok(Self {
            buses,
            branches,
            loads,
            gens,
            avrs,
            tgs,
            oxls,
            erls,
            ltcs,
            layout,
            gen_bus,
            avr_gen,
            tg_gen,
            oxl_avr,
            erl_bus,
            load_bus,
            ltc_bus,
            branch_from,
            branch_to,
            gen_avr,
            gen_tg,
            avr_oxl,
            branch_ltc,
            tg_zc,
            oxl_zc,
            erl_zc,
            gen_x,
            avr_x,
            tg_y,
            oxl_y,
            avr_y,
            gen_y,
            bus_y,
        })
    }

    // ----- flat index helpers ---------------------------------------------

    fn zc0(&self) -> usize {
        self.layout.offset_of(VarClass::SlowContinuous)
    }
    fn zd0(&self) -> usize {
        self.layout.offset_of(VarClass::SlowDiscrete)
    }
    fn x0(&self) -> usize {
        self.layout.offset_of(VarClass::Fast)
    }
    fn y0(&self) -> usize {
        self.layout.offset_of(VarClass::Algebraic)
    }

    pub fn bus_voltage_index(&self, bus: usize) -> usize {
        self.y0() + self.bus_y[bus]
    }

    pub fn bus_angle_index(&self, bus: usize) -> usize {
        self.y0() + self.bus_y[bus] + 1
    }

    pub fn gen_state_index(&self, gen: usize) -> usize {
        self.x0() + self.gen_x[gen]
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn ltc_index(&self, id: &str) -> Option<usize> {
        self.ltcs.iter().position(|l| l.id == id)
    }

    /// Tap ratio of a branch at the given state: the tap changer's discrete
    /// state when one is attached, the static tap otherwise.
    fn branch_tap(&self, branch: usize, s: &PartitionedState) -> f64 {
        match self.branch_ltc[branch] {
            Some(l) => s.flat()[self.zd0() + l],
            None => self.branches[branch].tap,
        }
    }

    /// Complex bus voltages from the algebraic part of the state.
    fn bus_phasors(&self, s: &PartitionedState) -> Vec<Complex<f64>> {
        let y0 = self.y0();
        self.buses
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let v = s.flat()[y0 + self.bus_y[i]];
                let th = s.flat()[y0 + self.bus_y[i] + 1];
                Complex::from_polar(v, th)
            })
            .collect()
    }

    /// Net complex power flowing out of each bus into the network, for
    /// arbitrary phasors and a tap lookup.
    pub(crate) fn injections_with<F>(&self, vs: &[Complex<f64>], tap_of: F) -> Vec<Complex<f64>>
    where
        F: Fn(usize) -> f64,
    {
        let mut current = vec![Complex::new(0.0, 0.0); self.buses.len()];
        for (b, br) in self.branches.iter().enumerate() {
            if !br.in_service {
                continue;
            }
            let m = tap_of(b);
            let ys = Complex::new(1.0, 0.0) / Complex::new(br.r, br.x);
            let ysh = Complex::new(0.0, br.b / 2.0);
            let f = self.branch_from[b];
            let t = self.branch_to[b];
            current[f] += (ys + ysh) / (m * m) * vs[f] - ys / m * vs[t];
            current[t] += -ys / m * vs[f] + (ys + ysh) * vs[t];
        }
        vs.iter()
            .zip(&current)
            .map(|(v, i)| v * i.conj())
            .collect()
    }

    /// Net complex power flowing out of each bus at the given state.
    fn network_injections(&self, s: &PartitionedState) -> Vec<Complex<f64>> {
        let vs = self.bus_phasors(s);
        self.injections_with(&vs, |b| self.branch_tap(b, s))
    }

    /// Initial tap ratio of a branch (tap-changer m0 when one is attached).
    pub(crate) fn initial_tap(&self, branch: usize) -> f64 {
        match self.branch_ltc[branch] {
            Some(l) => self.ltcs[l].m0,
            None => self.branches[branch].tap,
        }
    }

    /// Dense bus admittance matrix at the given taps (one entry per tap
    /// changer, applied to its branch; static taps elsewhere).
    pub fn admittance_matrix(&self, taps: &[f64]) -> nalgebra::DMatrix<Complex<f64>> {
        let n = self.buses.len();
        let mut y = nalgebra::DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
        for (b, br) in self.branches.iter().enumerate() {
            if !br.in_service {
                continue;
            }
            let m = match self.branch_ltc[b] {
                Some(l) => taps[l],
                None => br.tap,
            };
            let ys = Complex::new(1.0, 0.0) / Complex::new(br.r, br.x);
            let ysh = Complex::new(0.0, br.b / 2.0);
            let f = self.branch_from[b];
            let t = self.branch_to[b];
            y[(f, f)] += (ys + ysh) / (m * m);
            y[(f, t)] -= ys / m;
            y[(t, f)] -= ys / m;
            y[(t, t)] += ys + ysh;
        }
        y
    }

    /// Exponential-recovery load power drawn at the load's bus.
    fn erl_power(&self, k: usize, s: &PartitionedState) -> (f64, f64) {
        let e = &self.erls[k];
        let v = s.flat()[self.bus_voltage_index(self.erl_bus[k])];
        let v_ref = e.v0.unwrap_or(1.0);
        let vr = (v / v_ref).max(1e-9);
        let p0 = e.k_p / 100.0 * e.p_l0;
        let q0 = e.k_q / 100.0 * e.q_l0;
        let x_p = s.flat()[self.zc0() + self.erl_zc[k]];
        let x_q = s.flat()[self.zc0() + self.erl_zc[k] + 1];
        let p = x_p / e.t_p + p0 * vr.powf(e.alpha_t);
        let q = x_q / e.t_q + q0 * vr.powf(e.beta_t);
        (p, q)
    }

    /// Governor mechanical-power output from its stage states.
    fn tg_output(&self, k: usize, s: &PartitionedState) -> f64 {
        let t = &self.tgs[k];
        let z = self.zc0() + self.tg_zc[k];
        let x_g1 = s.flat()[z];
        let x_g2 = s.flat()[z + 1];
        let x_g3 = s.flat()[z + 2];
        x_g3 + t.t_4 / t.t_5 * (x_g2 + t.t_3 / t.t_c * x_g1)
    }

    fn gen_point(&self, k: usize, s: &PartitionedState) -> GenPoint {
        let g = &self.gens[k];
        let x = self.x0() + self.gen_x[k];
        let delta = s.flat()[x];
        let e_q = s.flat()[x + 2];
        let e_d = s.flat()[x + 3];
        let bus = self.gen_bus[k];
        let v = s.flat()[self.bus_voltage_index(bus)];
        let theta = s.flat()[self.bus_angle_index(bus)];
        let v_d = v * (delta - theta).sin();
        let v_q = v * (delta - theta).cos();
        // stator pair solved exactly for the currents
        let det = -(g.x_d_prime * g.x_q_prime) - g.r_a * g.r_a;
        let b1 = e_q - v_q;
        let b2 = e_d - v_d;
        let i_d = (-g.x_q_prime * b1 - g.r_a * b2) / det;
        let i_q = (g.x_d_prime * b2 - g.r_a * b1) / det;
        let p_e = (v_q + g.r_a * i_q) * i_q + (v_d + g.r_a * i_d) * i_d;
        GenPoint {
            v_d,
            v_q,
            i_d,
            i_q,
            p_e,
        }
    }

    /// Apply a contingency change in place. The layout is untouched; only
    /// parameters and service flags move.
    pub fn apply_change(&mut self, change: &NetworkChange) -> Result<(), ModelError> {
        match change {
            NetworkChange::BranchOutage { branch } => {
                let b = self
                    .branches
                    .iter_mut()
                    .find(|b| &b.id == branch)
                    .ok_or_else(|| ModelError::UnknownReference {
                        device: "contingency".into(),
                        kind: "branch",
                        target: branch.clone(),
                    })?;
                b.in_service = false;
                Ok(())
            }
            NetworkChange::LoadStep { load, p, q } => {
                let l = self
                    .loads
                    .iter_mut()
                    .find(|l| &l.id == load)
                    .ok_or_else(|| ModelError::UnknownReference {
                        device: "contingency".into(),
                        kind: "load",
                        target: load.clone(),
                    })?;
                l.p = *p;
                l.q = *q;
                Ok(())
            }
            NetworkChange::ParameterSet { target, value } => self.set_parameter(target, *value),
        }
    }

    fn set_parameter(&mut self, target: &str, value: f64) -> Result<(), ModelError> {
        let (id, param) = target.split_once('.').ok_or_else(|| {
            ModelError::InvalidParameter {
                device: target.to_string(),
                message: "expected `device.parameter`".into(),
            }
        })?;
        let unknown = || ModelError::InvalidParameter {
            device: id.to_string(),
            message: format!("unknown parameter `{param}`"),
        };
        if let Some(g) = self.gens.iter_mut().find(|g| g.id == id) {
            match param {
                "p0" => g.p0 = value,
                "d" => g.d = value,
                "k_omega" => g.k_omega = value,
                "k_p" => g.k_p = value,
                "p_m0" => g.p_m0 = Some(value),
                "v_f0" => g.v_f0 = Some(value),
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        if let Some(a) = self.avrs.iter_mut().find(|a| a.id == id) {
            match param {
                "v_ref0" => a.v_ref0 = Some(value),
                "k_a" => a.k_a = value,
                "v_r_max" => a.v_r_max = value,
                "v_r_min" => a.v_r_min = value,
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        if let Some(t) = self.tgs.iter_mut().find(|t| t.id == id) {
            match param {
                "p_order" => t.p_order = Some(value),
                "omega_ref0" => t.omega_ref0 = value,
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        if let Some(o) = self.oxls.iter_mut().find(|o| o.id == id) {
            match param {
                "i_f_lim" => o.i_f_lim = value,
                "t_0" => o.t_0 = value,
                "k_0" => o.k_0 = value,
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        if let Some(e) = self.erls.iter_mut().find(|e| e.id == id) {
            match param {
                "p_l0" => e.p_l0 = value,
                "q_l0" => e.q_l0 = value,
                "k_p" => e.k_p = value,
                "k_q" => e.k_q = value,
                "v0" => e.v0 = Some(value),
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        if let Some(l) = self.ltcs.iter_mut().find(|l| l.id == id) {
            match param {
                "v0" => l.v0 = value,
                "d" => l.d = value,
                "delta_m" => l.delta_m = value,
                "m_min" => l.m_min = value,
                "m_max" => l.m_max = value,
                "first_delay" => l.first_delay = value,
                "subsequent_delay" => l.subsequent_delay = value,
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        if let Some(ld) = self.loads.iter_mut().find(|l| l.id == id) {
            match param {
                "p" => ld.p = value,
                "q" => ld.q = value,
                _ => return Err(unknown()),
            }
            return Ok(());
        }
        Err(ModelError::UnknownReference {
            device: "contingency".into(),
            kind: "device",
            target: id.to_string(),
        })
    }
}

struct GenPoint {
    v_d: f64,
    v_q: f64,
    i_d: f64,
    i_q: f64,
    p_e: f64,
}

impl Model for SystemModel {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn slow_rhs(&self, t: f64, s: &PartitionedState, out: &mut [f64]) {
        let y0 = self.y0();
        let x0 = self.x0();
        for (k, tg) in self.tgs.iter().enumerate() {
            let z = self.zc0() + self.tg_zc[k];
            let x_g1 = s.flat()[z];
            let x_g2 = s.flat()[z + 1];
            let x_g3 = s.flat()[z + 2];
            let omega = s.flat()[x0 + self.gen_x[self.tg_gen[k]] + 1];
            let omega_ref = s.flat()[y0 + self.tg_y[k]];
            let p_order = tg.p_order.unwrap_or(0.0);
            let p_in_star = p_order + (omega_ref - omega) / tg.r;
            let p_in = p_in_star.clamp(tg.p_min, tg.p_max);
            let o = self.tg_zc[k];
            out[o] = (p_in - x_g1) / tg.t_s;
            out[o + 1] = ((1.0 - tg.t_3 / tg.t_c) * x_g1 - x_g2) / tg.t_c;
            out[o + 2] =
                ((1.0 - tg.t_4 / tg.t_5) * (x_g2 + tg.t_3 / tg.t_c * x_g1) - x_g3) / tg.t_5;
        }
        for (k, oxl) in self.oxls.iter().enumerate() {
            let i_f = s.flat()[y0 + self.oxl_y[k]];
            let active = t >= oxl.k_0 && i_f > oxl.i_f_lim;
            out[self.oxl_zc[k]] = if active {
                (i_f - oxl.i_f_lim) / oxl.t_0
            } else {
                0.0
            };
        }
        for (k, erl) in self.erls.iter().enumerate() {
            let v = s.flat()[self.bus_voltage_index(self.erl_bus[k])];
            let v_ref = erl.v0.unwrap_or(1.0);
            let vr = (v / v_ref).max(1e-9);
            let p0 = erl.k_p / 100.0 * erl.p_l0;
            let q0 = erl.k_q / 100.0 * erl.q_l0;
            let z = self.zc0() + self.erl_zc[k];
            let x_p = s.flat()[z];
            let x_q = s.flat()[z + 1];
            let o = self.erl_zc[k];
            out[o] = -x_p / erl.t_p + p0 * (vr.powf(erl.alpha_s) - vr.powf(erl.alpha_t));
            out[o + 1] = -x_q / erl.t_q + q0 * (vr.powf(erl.beta_s) - vr.powf(erl.beta_t));
        }
    }

    fn fast_rhs(&self, s: &PartitionedState, out: &mut [f64]) {
        let y0 = self.y0();
        let x0 = self.x0();
        for (k, g) in self.gens.iter().enumerate() {
            let gp = self.gen_point(k, s);
            let x = x0 + self.gen_x[k];
            let omega = s.flat()[x + 1];
            let e_q = s.flat()[x + 2];
            let e_d = s.flat()[x + 3];
            let y = y0 + self.gen_y[k];
            let p = s.flat()[y];
            let p_m = s.flat()[y + 2];
            let v_f = s.flat()[y + 3];
            let v_f_star = v_f + g.k_omega * (omega - 1.0) - g.k_p * (p - g.p0);
            let o = self.gen_x[k];
            out[o] = g.omega_b * (omega - 1.0);
            out[o + 1] = (p_m - gp.p_e - g.d * omega) / g.m;
            out[o + 2] =
                (-saturation(g.a_s, g.b_s, e_q) - (g.x_d - g.x_d_prime) * gp.i_d + v_f_star)
                    / g.t_d0_prime;
            out[o + 3] = (-e_d + (g.x_q - g.x_q_prime) * gp.i_q) / g.t_q0_prime;
        }
        for (k, a) in self.avrs.iter().enumerate() {
            let bus = self.gen_bus[self.avr_gen[k]];
            let v = s.flat()[self.bus_voltage_index(bus)];
            let x = x0 + self.avr_x[k];
            let v_m = s.flat()[x];
            let v_r1 = s.flat()[x + 1];
            let v_r2 = s.flat()[x + 2];
            let v_f = s.flat()[x + 3];
            let v_ref = s.flat()[y0 + self.avr_y[k]];
            let v_r = regulator_clamp(v_r1, a.v_r_min, a.v_r_max);
            let s_e = a.a_e * (a.b_e * v_f.abs()).exp();
            let o = self.avr_x[k];
            out[o] = (v - v_m) / a.t_r;
            out[o + 1] = (a.k_a * (v_ref - v_m - v_r2 - a.k_f / a.t_f * v_f) - v_r1) / a.t_a;
            out[o + 2] = -(a.k_f / a.t_f * v_f + v_r2) / a.t_f;
            out[o + 3] = -(v_f * (a.k_e + s_e) - v_r) / a.t_e;
        }
    }

    fn algebraic_residual(&self, s: &PartitionedState, out: &mut [f64]) {
        let y0 = self.y0();
        let x0 = self.x0();
        let zc0 = self.zc0();

        for (k, tg) in self.tgs.iter().enumerate() {
            out[self.tg_y[k]] = tg.omega_ref0 - s.flat()[y0 + self.tg_y[k]];
        }
        for (k, oxl) in self.oxls.iter().enumerate() {
            let gen = self.avr_gen[self.oxl_avr[k]];
            let bus = self.gen_bus[gen];
            let v = s.flat()[self.bus_voltage_index(bus)];
            let gy = y0 + self.gen_y[gen];
            let p = s.flat()[gy];
            let q = s.flat()[gy + 1];
            let est = field_current_estimate(oxl.x_q, v, p, q);
            out[self.oxl_y[k]] = est - s.flat()[y0 + self.oxl_y[k]];
        }
        for (k, a) in self.avrs.iter().enumerate() {
            let v_ref = s.flat()[y0 + self.avr_y[k]];
            // the limiter output lowers the effective regulator reference
            let v_oxl = match self.avr_oxl[k] {
                Some(o) => s.flat()[zc0 + self.oxl_zc[o]],
                None => 0.0,
            };
            out[self.avr_y[k]] = a.v_ref0.unwrap_or(1.0) - v_ref - v_oxl;
        }
        for (k, g) in self.gens.iter().enumerate() {
            let gp = self.gen_point(k, s);
            let y = y0 + self.gen_y[k];
            let p = s.flat()[y];
            let q = s.flat()[y + 1];
            let p_m = s.flat()[y + 2];
            let v_f = s.flat()[y + 3];
            let o = self.gen_y[k];
            out[o] = gp.v_d * gp.i_d + gp.v_q * gp.i_q - p;
            out[o + 1] = gp.v_q * gp.i_d - gp.v_d * gp.i_q - q;
            out[o + 2] = match self.gen_tg[k] {
                Some(t) => self.tg_output(t, s) - p_m,
                None => g.p_m0.unwrap_or(0.0) - p_m,
            };
            out[o + 3] = match self.gen_avr[k] {
                Some(a) => s.flat()[x0 + self.avr_x[a] + 3] - v_f,
                None => g.v_f0.unwrap_or(1.0) - v_f,
            };
        }

        let injections = self.network_injections(s);
        let mut p_dev = vec![0.0; self.buses.len()];
        let mut q_dev = vec![0.0; self.buses.len()];
        for (k, &bus) in self.gen_bus.iter().enumerate() {
            let y = y0 + self.gen_y[k];
            p_dev[bus] += s.flat()[y];
            q_dev[bus] += s.flat()[y + 1];
        }
        for (k, &bus) in self.load_bus.iter().enumerate() {
            p_dev[bus] -= self.loads[k].p;
            q_dev[bus] -= self.loads[k].q;
        }
        for (k, &bus) in self.erl_bus.iter().enumerate() {
            let (p, q) = self.erl_power(k, s);
            p_dev[bus] -= p;
            q_dev[bus] -= q;
        }
        for (i, bus) in self.buses.iter().enumerate() {
            let o = self.bus_y[i];
            if bus.infinite {
                out[o] = s.flat()[y0 + o] - bus.v0;
                out[o + 1] = s.flat()[y0 + o + 1] - bus.theta0;
            } else {
                out[o] = p_dev[i] - injections[i].re;
                out[o + 1] = q_dev[i] - injections[i].im;
            }
        }
    }

    fn discrete_update(
        &self,
        t: f64,
        s: &PartitionedState,
        timers: &mut [TimerState],
    ) -> (Vec<f64>, Vec<DiscreteEvent>) {
        let mut zd = s.discrete().to_vec();
        let mut fired: Vec<(f64, String, usize)> = Vec::new();
        for (k, ltc) in self.ltcs.iter().enumerate() {
            let v = s.flat()[self.bus_voltage_index(self.ltc_bus[k])];
            let outside = v > ltc.v0 + ltc.d || v < ltc.v0 - ltc.d;
            match timers[k] {
                TimerState::Idle => {
                    if outside {
                        timers[k] = TimerState::Armed { since: t, first: true };
                    }
                }
                TimerState::Armed { since, first } => {
                    if !outside {
                        timers[k] = TimerState::Idle;
                    } else {
                        let delay = if first {
                            ltc.first_delay
                        } else {
                            ltc.subsequent_delay
                        };
                        if t - since >= delay - 1e-9 {
                            fired.push((since + delay, self.buses[self.ltc_bus[k]].id.clone(), k));
                        }
                    }
                }
            }
        }
        // earliest due time first, controlled-bus id breaking ties
        fired.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let mut events = Vec::new();
        for (_, _, k) in fired {
            let ltc = &self.ltcs[k];
            let v = s.flat()[self.bus_voltage_index(self.ltc_bus[k])];
            let old = zd[k];
            let new = if v > ltc.v0 + ltc.d {
                (old + ltc.delta_m).min(ltc.m_max)
            } else {
                (old - ltc.delta_m).max(ltc.m_min)
            };
            // saturated taps fire no event but stay armed for a later retry
            timers[k] = TimerState::Armed { since: t, first: false };
            if new != old {
                zd[k] = new;
                events.push(DiscreteEvent {
                    time: t,
                    index: k,
                    device: ltc.id.clone(),
                    old,
                    new,
                });
            }
        }
        (zd, events)
    }

    fn clamp_state(&self, s: &mut PartitionedState) {
        let zc0 = self.zc0();
        for k in 0..self.oxls.len() {
            let i = zc0 + self.oxl_zc[k];
            if s.flat()[i] < 0.0 {
                s.set(i, 0.0);
            }
        }
    }

    fn max_fast_time_constant(&self) -> f64 {
        let mut tc: f64 = 0.0;
        for g in &self.gens {
            tc = tc.max(g.t_d0_prime).max(g.t_q0_prime);
        }
        for a in &self.avrs {
            tc = tc.max(a.t_a).max(a.t_e).max(a.t_f).max(a.t_r);
        }
        tc.max(1.0)
    }
}

#[cfg(test)]
pub(crate) mod tests;
