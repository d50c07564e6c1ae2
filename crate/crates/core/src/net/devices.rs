//! Device parameter blocks. Field names follow the conventional per-unit
//! notation (lower snake case) and double as the wire names in scenario
//! files.

use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: String,
    /// Initial voltage magnitude guess / setpoint, p.u.
    #[serde(default = "one")]
    pub v0: f64,
    /// Initial voltage angle, rad.
    #[serde(default = "zero")]
    pub theta0: f64,
    /// Infinite (ideal source) bus: voltage and angle are pinned.
    #[serde(default)]
    pub infinite: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Series resistance, p.u.
    #[serde(default = "zero")]
    pub r: f64,
    /// Series reactance, p.u.
    pub x: f64,
    /// Total line-charging susceptance, p.u.
    #[serde(default = "zero")]
    pub b: f64,
    /// Off-nominal tap ratio on the `from` side.
    #[serde(default = "one")]
    pub tap: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub id: String,
    pub bus: String,
    /// Constant active power drawn, p.u.
    pub p: f64,
    /// Constant reactive power drawn, p.u.
    pub q: f64,
}

/// Fourth-order synchronous machine.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub id: String,
    pub bus: String,
    /// Base frequency, rad/s.
    #[serde(default = "default_omega_b")]
    pub omega_b: f64,
    /// Mechanical starting time (2H), s.
    pub m: f64,
    /// Damping coefficient.
    #[serde(default = "zero")]
    pub d: f64,
    pub x_d: f64,
    pub x_d_prime: f64,
    pub x_q: f64,
    pub x_q_prime: f64,
    #[serde(default = "zero")]
    pub r_a: f64,
    pub t_d0_prime: f64,
    pub t_q0_prime: f64,
    /// Speed feedback gain in the field-voltage summation.
    #[serde(default = "zero")]
    pub k_omega: f64,
    /// Active-power feedback gain in the field-voltage summation.
    #[serde(default = "zero")]
    pub k_p: f64,
    /// Scheduled initial active power, p.u.
    pub p0: f64,
    /// Saturation coefficients of f_s(e'_q) = e'_q + a_s exp(b_s e'_q);
    /// zero by default (no saturation).
    #[serde(default = "zero")]
    pub a_s: f64,
    #[serde(default = "zero")]
    pub b_s: f64,
    /// Constant mechanical power for machines without a governor; filled by
    /// initialization when absent.
    #[serde(default)]
    pub p_m0: Option<f64>,
    /// Constant field voltage for machines without a regulator; filled by
    /// initialization when absent.
    #[serde(default)]
    pub v_f0: Option<f64>,
}

fn default_omega_b() -> f64 {
    2.0 * std::f64::consts::PI * 60.0
}

/// IEEE type-1 style voltage regulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvrSpec {
    pub id: String,
    pub gen: String,
    pub k_a: f64,
    pub t_a: f64,
    pub k_f: f64,
    pub t_f: f64,
    pub k_e: f64,
    pub t_e: f64,
    pub t_r: f64,
    /// Ceiling function coefficients: S_e(v_f) = a_e exp(b_e |v_f|).
    #[serde(default = "zero")]
    pub a_e: f64,
    #[serde(default = "zero")]
    pub b_e: f64,
    pub v_r_max: f64,
    pub v_r_min: f64,
    /// Reference voltage; filled by initialization when absent.
    #[serde(default)]
    pub v_ref0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TgSpec {
    pub id: String,
    pub gen: String,
    /// Droop.
    pub r: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub t_s: f64,
    pub t_c: f64,
    pub t_3: f64,
    pub t_4: f64,
    pub t_5: f64,
    #[serde(default = "one")]
    pub omega_ref0: f64,
    /// Power order; filled by initialization when absent.
    #[serde(default)]
    pub p_order: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OxlSpec {
    pub id: String,
    pub avr: String,
    /// Integrator time constant, s.
    pub t_0: f64,
    /// Maximum field current, p.u.
    pub i_f_lim: f64,
    /// Fixed activation delay from simulation start, s.
    #[serde(default = "zero")]
    pub k_0: f64,
    /// Estimated machine reactances used by the field-current estimate.
    pub x_d: f64,
    pub x_q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErlSpec {
    pub id: String,
    pub bus: String,
    /// Active / reactive recovery fractions, percent.
    #[serde(default = "default_hundred")]
    pub k_p: f64,
    #[serde(default = "default_hundred")]
    pub k_q: f64,
    pub t_p: f64,
    pub t_q: f64,
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub beta_s: f64,
    pub beta_t: f64,
    /// Base powers from the power-flow solution, p.u.
    pub p_l0: f64,
    pub q_l0: f64,
    /// Reference voltage; filled with the solved bus voltage when absent.
    #[serde(default)]
    pub v0: Option<f64>,
}

fn default_hundred() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtcSpec {
    pub id: String,
    /// Tapped branch.
    pub branch: String,
    /// Bus whose voltage magnitude is regulated.
    pub controlled_bus: String,
    /// Voltage target, p.u.
    pub v0: f64,
    /// Half deadband, p.u.
    pub d: f64,
    /// Tap step.
    pub delta_m: f64,
    pub m_min: f64,
    pub m_max: f64,
    /// Delay before the first tap after the voltage leaves the deadband, s.
    #[serde(default = "default_first_delay")]
    pub first_delay: f64,
    /// Delay between subsequent taps, s.
    #[serde(default = "default_subsequent_delay")]
    pub subsequent_delay: f64,
    /// Initial tap ratio.
    #[serde(default = "one")]
    pub m0: f64,
}

fn default_first_delay() -> f64 {
    20.0
}

fn default_subsequent_delay() -> f64 {
    10.0
}

/// Saturation characteristic f_s(e'_q) shared by the machine equations.
pub fn saturation(a_s: f64, b_s: f64, e_q: f64) -> f64 {
    if a_s == 0.0 {
        e_q
    } else {
        e_q + a_s * (b_s * e_q).exp()
    }
}

/// AVR regulator-voltage limiter.
pub fn regulator_clamp(v_r1: f64, v_r_min: f64, v_r_max: f64) -> f64 {
    v_r1.clamp(v_r_min, v_r_max)
}

/// Field-current estimate i_f = sqrt((v + gamma_q)^2 + gamma_p^2) with
/// gamma_p = x_q p / v, gamma_q = x_q q / v.
pub fn field_current_estimate(x_q: f64, v: f64, p: f64, q: f64) -> f64 {
    let v_safe = v.abs().max(1e-9);
    let gamma_p = x_q * p / v_safe;
    let gamma_q = x_q * q / v_safe;
    let a = v_safe + gamma_q;
    (a * a + gamma_p * gamma_p).sqrt()
}
