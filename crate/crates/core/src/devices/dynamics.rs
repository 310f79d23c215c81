//! Ground-truth physics, DoS mappings and the unified one-step model.

use serde::{Deserialize, Serialize};

use super::{DeviceState, Env, EvParams, GesParams, IvaParams, TclParams};
use crate::error::{Error, Result};

const POWER_TOL: f64 = 1e-9;
const TIME_TOL_H: f64 = 1e-9;

/// Coefficients of `P_k = m1 S_{k+1} + m2 S_k + m3` for one device and one
/// step length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnifiedCoeffs {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl UnifiedCoeffs {
    pub fn power(&self, s_next: f64, s_now: f64) -> f64 {
        self.m1 * s_next + self.m2 * s_now + self.m3
    }

    /// Inverts the model for the DoS reached after holding `power`.
    pub fn next_dos(&self, power: f64, s_now: f64) -> f64 {
        (power - self.m2 * s_now - self.m3) / self.m1
    }
}

/// Average power an EV must draw to reach its target energy by departure.
pub fn ev_required_power(p: &EvParams) -> Result<f64> {
    let duration = p.t_dep_h - p.t_in_h;
    if duration <= 0.0 {
        return Err(Error::invalid(format!(
            "ev departure ({}) must follow plug-in ({})",
            p.t_dep_h, p.t_in_h
        )));
    }
    Ok((p.e_tar_kwh - p.e_in_kwh) / (p.eta * duration))
}

/// Energy the EV would hold at `time_h` when charging steadily at the
/// required power.
pub fn ev_expected_energy(p: &EvParams, time_h: f64) -> Result<f64> {
    if time_h < p.t_in_h - TIME_TOL_H || time_h > p.t_dep_h + TIME_TOL_H {
        return Err(Error::contract(format!(
            "time {time_h} h outside ev session [{}, {}]",
            p.t_in_h, p.t_dep_h
        )));
    }
    let p_req = ev_required_power(p)?;
    Ok(p.e_in_kwh + p.eta * p_req * (time_h - p.t_in_h))
}

fn tcl_dos(thermal: &TclParams, temp: f64) -> f64 {
    (temp - thermal.t_set) / thermal.t_dev
}

/// Degree of satisfaction of a device. The raw value is returned without
/// clamping; an off-grid EV is reported as not participating.
pub fn dos(state: &DeviceState, params: &GesParams, time_h: f64) -> Result<f64> {
    match params {
        GesParams::Ees(p) => {
            let soc = state.energy_kwh / p.capacity_kwh;
            Ok(1.0 - 2.0 * soc)
        }
        GesParams::Ev(p) => {
            if !state.online {
                return Err(Error::NotParticipating(format!(
                    "ev session [{}, {}]",
                    p.t_in_h, p.t_dep_h
                )));
            }
            let e_exp = ev_expected_energy(p, time_h)?;
            Ok(-(state.energy_kwh - e_exp) / p.deadband_kwh())
        }
        GesParams::Iva(p) => Ok(tcl_dos(&p.thermal, state.indoor_temp_c)),
        GesParams::Ffa(p) => Ok(tcl_dos(&p.thermal, state.indoor_temp_c)),
    }
}

/// Unified model coefficients over a step of `dt_h` hours.
pub fn unified_coeffs(params: &GesParams, env: &Env, dt_h: f64) -> Result<UnifiedCoeffs> {
    if !(dt_h > 0.0) {
        return Err(Error::invalid(format!("step length must be positive, got {dt_h}")));
    }
    let coeffs = match params {
        GesParams::Ees(p) => {
            let k = p.capacity_kwh / (2.0 * dt_h);
            UnifiedCoeffs { m1: -k, m2: k, m3: 0.0 }
        }
        GesParams::Ev(p) => {
            let k = p.deadband_kwh() / (p.eta * dt_h);
            UnifiedCoeffs {
                m1: -k,
                m2: k,
                m3: ev_required_power(p)?,
            }
        }
        GesParams::Iva(p) => {
            let th = &p.thermal;
            let a = th.a();
            let alpha = (-a * dt_h).exp();
            let beta = p.q1 / (a * th.c_th * p.p1);
            let gamma = (p.p1 * p.q2 - p.p2 * p.q1) / (a * th.c_th * p.p1);
            let k = th.t_dev / (beta * (1.0 - alpha));
            UnifiedCoeffs {
                m1: -k,
                m2: alpha * k,
                m3: (env.outdoor_temp_c - th.t_set - gamma) / beta,
            }
        }
        GesParams::Ffa(p) => {
            let th = &p.thermal;
            let alpha = (-th.a() * dt_h).exp();
            let beta = th.r_th * p.cop;
            let k = th.t_dev / (beta * (1.0 - alpha));
            UnifiedCoeffs {
                m1: -k,
                m2: alpha * k,
                m3: (env.outdoor_temp_c - th.t_set) / beta,
            }
        }
    };
    Ok(coeffs)
}

/// Exact recursion of the first-order thermal model at constant heat rate.
fn thermal_step(th: &TclParams, temp: f64, heat_kw: f64, outdoor: f64, dt_h: f64) -> f64 {
    let alpha = (-th.a() * dt_h).exp();
    let drop = th.r_th * heat_kw;
    (temp - outdoor + drop) * alpha + outdoor - drop
}

fn check_admissible(params: &GesParams, power: f64) -> Result<()> {
    let ok = match params {
        GesParams::Ees(p) => power.abs() <= p.p_nom_kw + POWER_TOL,
        GesParams::Iva(p) => power >= p.p_min_kw - POWER_TOL && power <= p.p_max_kw + POWER_TOL,
        GesParams::Ev(p) => power == 0.0 || power == p.p_nom_kw,
        GesParams::Ffa(p) => power == 0.0 || power == p.p_nom_kw,
    };
    if ok && power.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "power {power} kW is not admissible for {}",
            params.kind()
        )))
    }
}

/// Advances the ground-truth plant by `dt_h` hours at constant `power`.
pub fn step_physics(
    state: &DeviceState,
    params: &GesParams,
    power: f64,
    dt_h: f64,
    env: &Env,
) -> Result<DeviceState> {
    let mut next = *state;
    if let GesParams::Ev(_) = params {
        if !state.online {
            if power != 0.0 {
                return Err(Error::contract("off-grid ev cannot draw power"));
            }
            next.power_kw = 0.0;
            return Ok(next);
        }
    }
    check_admissible(params, power)?;
    match params {
        GesParams::Ees(p) => {
            let delta = if power >= 0.0 {
                p.eta_charge * power * dt_h
            } else {
                power * dt_h / p.eta_discharge
            };
            next.energy_kwh = state.energy_kwh + delta;
        }
        GesParams::Ev(p) => {
            next.energy_kwh = state.energy_kwh + p.eta * power * dt_h;
        }
        GesParams::Iva(p) => {
            let heat = p.heat_rate(power);
            next.indoor_temp_c =
                thermal_step(&p.thermal, state.indoor_temp_c, heat, env.outdoor_temp_c, dt_h);
        }
        GesParams::Ffa(p) => {
            let heat = p.cop * power;
            next.indoor_temp_c =
                thermal_step(&p.thermal, state.indoor_temp_c, heat, env.outdoor_temp_c, dt_h);
        }
    }
    next.power_kw = power;
    Ok(next)
}

/// Heat rate that moves the indoor temperature from `t_a` to `t_tar` in
/// `t_p_h` hours at outdoor temperature `t_o`.
pub fn required_heat_rate(th: &TclParams, t_a: f64, t_o: f64, t_tar: f64, t_p_h: f64) -> f64 {
    let decay = (-th.a() * t_p_h).exp();
    ((t_tar - t_o) - (t_a - t_o) * decay) / (th.r_th * (decay - 1.0))
}

/// Electric power an IVA needs to reach `t_tar` after `t_p_h` hours. Not
/// clamped to the operating range.
pub fn g_power_iva(p: &IvaParams, t_a: f64, t_o: f64, t_tar: f64, t_p_h: f64) -> f64 {
    let heat = required_heat_rate(&p.thermal, t_a, t_o, t_tar, t_p_h);
    p.power_for_heat(heat)
}

/// DoS a device reaches after holding `power` for `dt_h` hours, according to
/// its unified model.
pub fn predict_dos(
    state: &DeviceState,
    params: &GesParams,
    env: &Env,
    power: f64,
    dt_h: f64,
    time_h: f64,
) -> Result<f64> {
    let coeffs = unified_coeffs(params, env, dt_h)?;
    let s_now = dos(state, params, time_h)?;
    Ok(coeffs.next_dos(power, s_now))
}
