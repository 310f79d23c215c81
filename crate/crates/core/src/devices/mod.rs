//! Device-level models for the four generalized energy storage kinds.
//!
//! Every device maps its physical state (stored energy or indoor temperature)
//! onto a dimensionless degree of satisfaction (DoS) in `[-1, 1]`, exposes a
//! linear one-step model `P_k = m1 S_{k+1} + m2 S_k + m3`, and expresses its
//! flexibility to the aggregator as a non-increasing demand curve over the
//! virtual price.
//!
//! Time is measured in hours throughout; powers in kW, energies in kWh.

mod bidding;
mod dynamics;

pub use bidding::{
    bid, build_demand_curve, characteristic_powers, respond, BidContext, BidReason,
    CharacteristicPowers, Response, SWITCH_GUARD_MARGIN,
};
pub use dynamics::{
    dos, ev_expected_energy, ev_required_power, g_power_iva, predict_dos, required_heat_rate, step_physics,
    unified_coeffs, UnifiedCoeffs,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds per hour, used to convert device timers to model time.
pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GesKind {
    Ees,
    Ev,
    Iva,
    Ffa,
}

impl GesKind {
    pub const ALL: [GesKind; 4] = [GesKind::Ees, GesKind::Ev, GesKind::Iva, GesKind::Ffa];

    /// Continuous-power devices (EES, IVA) can hold any power in their
    /// operating range; the others switch between OFF and a fixed ON power.
    pub fn is_continuous(self) -> bool {
        matches!(self, GesKind::Ees | GesKind::Iva)
    }

    pub fn label(self) -> &'static str {
        match self {
            GesKind::Ees => "ees",
            GesKind::Ev => "ev",
            GesKind::Iva => "iva",
            GesKind::Ffa => "ffa",
        }
    }

    pub fn index(self) -> usize {
        match self {
            GesKind::Ees => 0,
            GesKind::Ev => 1,
            GesKind::Iva => 2,
            GesKind::Ffa => 3,
        }
    }
}

impl std::fmt::Display for GesKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Electric energy storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EesParams {
    pub capacity_kwh: f64,
    pub p_nom_kw: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub e_min_kwh: f64,
    pub e_max_kwh: f64,
    pub t_res_s: u32,
}

/// One charging session of an electric vehicle. `t_in_h` and `t_dep_h` are
/// absolute simulation hours, so an overnight session simply has
/// `t_dep_h > 24` (or `t_in_h < 0` for a session already running at midnight).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvParams {
    pub capacity_kwh: f64,
    pub p_nom_kw: f64,
    pub eta: f64,
    pub t_in_h: f64,
    pub t_dep_h: f64,
    pub e_in_kwh: f64,
    pub e_tar_kwh: f64,
    /// Energy deadband in percent of capacity.
    pub deadband_pct: f64,
    pub t_lock_s: u32,
}

impl EvParams {
    /// Half-width of the admissible energy corridor around the expected profile.
    pub fn deadband_kwh(&self) -> f64 {
        self.capacity_kwh * self.deadband_pct / 100.0
    }

    pub fn is_plugged(&self, time_h: f64) -> bool {
        time_h >= self.t_in_h && time_h < self.t_dep_h
    }
}

/// First-order RC thermal envelope shared by both air-conditioner kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TclParams {
    /// Thermal resistance, °C/kW.
    pub r_th: f64,
    /// Thermal capacitance, kWh/°C.
    pub c_th: f64,
    pub t_set: f64,
    pub t_dev: f64,
}

impl TclParams {
    /// Inverse time constant `1/(R C)` in 1/h.
    pub fn a(&self) -> f64 {
        1.0 / (self.r_th * self.c_th)
    }
}

/// Inverter air conditioner: continuous compressor frequency with a linear
/// electrical model `P = p1 f + p2`, `Q = q1 f + q2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvaParams {
    pub thermal: TclParams,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub p1: f64,
    pub p2: f64,
    pub q1: f64,
    pub q2: f64,
    pub t_res_s: u32,
}

impl IvaParams {
    pub fn heat_rate(&self, power_kw: f64) -> f64 {
        let freq = (power_kw - self.p2) / self.p1;
        self.q1 * freq + self.q2
    }

    pub fn power_for_heat(&self, heat_kw: f64) -> f64 {
        self.p1 * (heat_kw - self.q2) / self.q1 + self.p2
    }
}

/// Fixed-frequency (ON/OFF) air conditioner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FfaParams {
    pub thermal: TclParams,
    pub p_nom_kw: f64,
    pub cop: f64,
    pub t_lock_s: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GesParams {
    Ees(EesParams),
    Ev(EvParams),
    Iva(IvaParams),
    Ffa(FfaParams),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn efficiency(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1], got {v}")))
    }
}

impl TclParams {
    pub fn validate(&self) -> Result<()> {
        positive("r_th", self.r_th)?;
        positive("c_th", self.c_th)?;
        positive("t_dev", self.t_dev)?;
        if !self.t_set.is_finite() {
            return Err(Error::invalid("t_set must be finite"));
        }
        Ok(())
    }
}

impl GesParams {
    pub fn kind(&self) -> GesKind {
        match self {
            GesParams::Ees(_) => GesKind::Ees,
            GesParams::Ev(_) => GesKind::Ev,
            GesParams::Iva(_) => GesKind::Iva,
            GesParams::Ffa(_) => GesKind::Ffa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GesParams::Ees(p) => {
                positive("ees capacity", p.capacity_kwh)?;
                positive("ees nominal power", p.p_nom_kw)?;
                efficiency("ees charge efficiency", p.eta_charge)?;
                efficiency("ees discharge efficiency", p.eta_discharge)?;
                if !(0.0 <= p.e_min_kwh && p.e_min_kwh < p.e_max_kwh && p.e_max_kwh <= p.capacity_kwh)
                {
                    return Err(Error::invalid(format!(
                        "ees energy bounds must satisfy 0 <= e_min < e_max <= capacity, got [{}, {}] / {}",
                        p.e_min_kwh, p.e_max_kwh, p.capacity_kwh
                    )));
                }
                if p.t_res_s == 0 {
                    return Err(Error::invalid("ees response cycle must be positive"));
                }
            }
            GesParams::Ev(p) => {
                positive("ev capacity", p.capacity_kwh)?;
                positive("ev nominal power", p.p_nom_kw)?;
                efficiency("ev efficiency", p.eta)?;
                positive("ev deadband", p.deadband_pct)?;
                if p.t_dep_h <= p.t_in_h {
                    return Err(Error::invalid(format!(
                        "ev departure ({}) must follow plug-in ({})",
                        p.t_dep_h, p.t_in_h
                    )));
                }
                if !(0.0 <= p.e_in_kwh && p.e_in_kwh <= p.e_tar_kwh && p.e_tar_kwh <= p.capacity_kwh) {
                    return Err(Error::invalid(format!(
                        "ev energies must satisfy 0 <= e_in <= e_tar <= capacity, got {} / {} / {}",
                        p.e_in_kwh, p.e_tar_kwh, p.capacity_kwh
                    )));
                }
            }
            GesParams::Iva(p) => {
                p.thermal.validate()?;
                positive("iva p_min", p.p_min_kw)?;
                if p.p_max_kw <= p.p_min_kw {
                    return Err(Error::invalid("iva p_max must exceed p_min"));
                }
                positive("iva q1", p.q1)?;
                if p.p1 == 0.0 || !p.p1.is_finite() {
                    return Err(Error::invalid("iva p1 must be non-zero"));
                }
                if p.t_res_s == 0 {
                    return Err(Error::invalid("iva response cycle must be positive"));
                }
            }
            GesParams::Ffa(p) => {
                p.thermal.validate()?;
                positive("ffa nominal power", p.p_nom_kw)?;
                positive("ffa cop", p.cop)?;
            }
        }
        Ok(())
    }

    /// Operating power limits used in the aggregator's fleet limits: the
    /// continuous range for CP-GES, `[0, P_ON]` for DP-GES.
    pub fn operational_limits(&self) -> (f64, f64) {
        match self {
            GesParams::Ees(p) => (-p.p_nom_kw, p.p_nom_kw),
            GesParams::Iva(p) => (p.p_min_kw, p.p_max_kw),
            GesParams::Ev(p) => (0.0, p.p_nom_kw),
            GesParams::Ffa(p) => (0.0, p.p_nom_kw),
        }
    }

    /// ON power of a discrete-power device.
    pub fn on_power(&self) -> Option<f64> {
        match self {
            GesParams::Ev(p) => Some(p.p_nom_kw),
            GesParams::Ffa(p) => Some(p.p_nom_kw),
            _ => None,
        }
    }

    pub fn lockout_s(&self) -> u32 {
        match self {
            GesParams::Ev(p) => p.t_lock_s,
            GesParams::Ffa(p) => p.t_lock_s,
            _ => 0,
        }
    }

    pub fn response_cycle_s(&self) -> u32 {
        match self {
            GesParams::Ees(p) => p.t_res_s,
            GesParams::Iva(p) => p.t_res_s,
            _ => 0,
        }
    }

    pub fn thermal(&self) -> Option<&TclParams> {
        match self {
            GesParams::Iva(p) => Some(&p.thermal),
            GesParams::Ffa(p) => Some(&p.thermal),
            _ => None,
        }
    }
}

/// Mutable per-device state. Only the fields relevant to a device's kind are
/// meaningful: `energy_kwh` for EES/EV, `indoor_temp_c` for the air
/// conditioners, `on` and `lock_remaining_s` for DP-GES, `online` for EVs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub energy_kwh: f64,
    pub indoor_temp_c: f64,
    pub on: bool,
    pub lock_remaining_s: u32,
    /// Time until a CP-GES re-reads the price (its response-cycle boundary).
    pub hold_remaining_s: u32,
    pub online: bool,
    pub power_kw: f64,
}

impl DeviceState {
    pub fn with_energy(energy_kwh: f64) -> Self {
        DeviceState {
            energy_kwh,
            indoor_temp_c: f64::NAN,
            on: false,
            lock_remaining_s: 0,
            hold_remaining_s: 0,
            online: true,
            power_kw: 0.0,
        }
    }

    pub fn with_temperature(indoor_temp_c: f64) -> Self {
        DeviceState {
            energy_kwh: f64::NAN,
            indoor_temp_c,
            on: false,
            lock_remaining_s: 0,
            hold_remaining_s: 0,
            online: true,
            power_kw: 0.0,
        }
    }

    pub fn is_locked(&self) -> bool {
        self.lock_remaining_s > 0
    }
}

/// Exogenous conditions seen by a device during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Env {
    pub outdoor_temp_c: f64,
}

impl Env {
    pub fn new(outdoor_temp_c: f64) -> Self {
        Env { outdoor_temp_c }
    }
}

/// A device under coordination.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: usize,
    pub params: GesParams,
    pub state: DeviceState,
    /// Later charging sessions of an EV, in chronological order.
    pub upcoming_sessions: Vec<EvParams>,
}

impl Device {
    pub fn new(id: usize, params: GesParams, state: DeviceState) -> Result<Self> {
        params.validate()?;
        Ok(Device {
            id,
            params,
            state,
            upcoming_sessions: Vec::new(),
        })
    }

    pub fn kind(&self) -> GesKind {
        self.params.kind()
    }

    pub fn name(&self) -> String {
        format!("{}#{}", self.kind(), self.id)
    }

    /// Fraction of the hour `[hour_start_h, hour_start_h + 1)` during which the
    /// device is connected, counting every known EV session.
    pub fn online_fraction(&self, hour_start_h: f64) -> f64 {
        match &self.params {
            GesParams::Ev(current) => std::iter::once(current)
                .chain(self.upcoming_sessions.iter())
                .map(|s| {
                    let lo = s.t_in_h.max(hour_start_h);
                    let hi = s.t_dep_h.min(hour_start_h + 1.0);
                    (hi - lo).max(0.0)
                })
                .sum::<f64>()
                .min(1.0),
            _ => 1.0,
        }
    }

    /// Commits a response for the coming control cycle: records the power and
    /// ON/OFF state, starts the lockout timer on a switch and the hold timer on
    /// a CP-GES response-cycle boundary. Returns whether the device switched.
    pub fn commit(&mut self, response: Response) -> bool {
        let kind = self.kind();
        self.state.power_kw = response.power_kw;
        if kind.is_continuous() {
            if self.state.hold_remaining_s == 0 {
                self.state.hold_remaining_s = self.params.response_cycle_s();
            }
            false
        } else {
            if response.switched {
                self.state.on = !self.state.on;
                self.state.lock_remaining_s = self.params.lockout_s();
            }
            response.switched
        }
    }

    /// Advances the plant by one control cycle at the committed power and
    /// counts down the device timers.
    pub fn advance(&mut self, dt_s: u32, env: &Env) -> Result<()> {
        let dt_h = dt_s as f64 / SECONDS_PER_HOUR;
        let power = self.state.power_kw;
        self.state = step_physics(&self.state, &self.params, power, dt_h, env)?;
        self.state.lock_remaining_s = self.state.lock_remaining_s.saturating_sub(dt_s);
        self.state.hold_remaining_s = self.state.hold_remaining_s.saturating_sub(dt_s);
        Ok(())
    }

    pub fn dos(&self, time_h: f64) -> Result<f64> {
        dos(&self.state, &self.params, time_h)
    }
}
