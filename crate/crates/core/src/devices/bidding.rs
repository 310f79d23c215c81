//! Characteristic powers, demand-curve construction and price response.

use serde::{Deserialize, Serialize};

use super::dynamics::{dos, g_power_iva, unified_coeffs};
use super::{DeviceState, Env, GesParams, SECONDS_PER_HOUR};
use crate::error::{Error, Result};
use crate::market::{DemandCurve, Piecewise};

/// A DP-GES refuses to switch when its predicted DoS at the end of the
/// ensuing lockout would land closer than this to a comfort bound.
pub const SWITCH_GUARD_MARGIN: f64 = 0.02;

/// Timing context for one bid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidContext {
    /// Current simulation time, hours.
    pub time_h: f64,
    /// Saturation look-ahead, hours.
    pub t_p_h: f64,
    /// Control cycle, hours.
    pub control_dt_h: f64,
}

impl BidContext {
    pub fn new(time_h: f64) -> Self {
        BidContext {
            time_h,
            t_p_h: 5.0 / 60.0,
            control_dt_h: 10.0 / SECONDS_PER_HOUR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicPowers {
    pub p_const: f64,
    pub p_sat_min: f64,
    pub p_sat_max: f64,
    pub p_opt_min: f64,
    pub p_opt_max: f64,
}

/// Characteristic powers of a CP-GES for the current control cycle.
pub fn characteristic_powers(
    state: &DeviceState,
    params: &GesParams,
    env: &Env,
    t_p_h: f64,
) -> Result<CharacteristicPowers> {
    if !(t_p_h > 0.0) {
        return Err(Error::invalid("saturation horizon must be positive"));
    }
    let (mut p_const, p_sat_min, p_sat_max, p_opt_min, p_opt_max) = match params {
        GesParams::Ees(p) => {
            let e = state.energy_kwh;
            (
                0.0,
                p.eta_discharge * (p.e_min_kwh - e) / t_p_h,
                (p.e_max_kwh - e) / (p.eta_charge * t_p_h),
                -p.p_nom_kw,
                p.p_nom_kw,
            )
        }
        GesParams::Iva(p) => {
            let th = &p.thermal;
            let t_a = state.indoor_temp_c;
            let t_o = env.outdoor_temp_c;
            (
                g_power_iva(p, t_a, t_o, t_a, t_p_h),
                g_power_iva(p, t_a, t_o, th.t_set + th.t_dev, t_p_h),
                g_power_iva(p, t_a, t_o, th.t_set - th.t_dev, t_p_h),
                p.p_min_kw,
                p.p_max_kw,
            )
        }
        _ => {
            return Err(Error::contract(format!(
                "characteristic powers are defined for CP-GES only, got {}",
                params.kind()
            )))
        }
    };
    // Outside the comfort band the hold power falls outside the saturation
    // interval; pull it onto the nearer bound.
    if p_const > p_sat_max {
        p_const = p_sat_max;
    }
    if p_const < p_sat_min {
        p_const = p_sat_min;
    }
    Ok(CharacteristicPowers {
        p_const,
        p_sat_min,
        p_sat_max,
        p_opt_min,
        p_opt_max,
    })
}

/// Clips a non-increasing polyline to `[lo, hi]`, inserting the crossing
/// points so the result stays exact.
fn clip_polyline(points: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    for (i, &(l0, p0)) in points.iter().enumerate() {
        out.push((l0, p0.clamp(lo, hi)));
        if let Some(&(l1, p1)) = points.get(i + 1) {
            for bound in [hi, lo] {
                if (p0 - bound) * (p1 - bound) < 0.0 {
                    let lambda = l0 + (p0 - bound) / (p0 - p1) * (l1 - l0);
                    out.push((lambda, bound));
                }
            }
        }
    }
    out
}

fn cp_curve(s: f64, cp: &CharacteristicPowers) -> Result<DemandCurve> {
    let s = s.clamp(-1.0, 1.0);
    let points: Vec<(f64, f64)> = if s <= -1.0 {
        vec![(-1.0, cp.p_const), (1.0, cp.p_sat_min)]
    } else if s >= 1.0 {
        vec![(-1.0, cp.p_sat_max), (1.0, cp.p_const)]
    } else {
        vec![(-1.0, cp.p_sat_max), (s, cp.p_const), (1.0, cp.p_sat_min)]
    };
    let clipped = clip_polyline(&points, cp.p_opt_min, cp.p_opt_max);
    Ok(DemandCurve::Piecewise(Piecewise::from_points(&clipped)?))
}

/// Why a device bid the way it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidReason {
    /// CP-GES curve or DP-GES step at `S′`.
    Curve,
    /// CP-GES between response-cycle boundaries.
    Hold,
    /// DP-GES inside its lockout.
    Locked,
    /// Staying put would carry the DoS past a bound within the cycle.
    ComfortOverride,
    /// Switching would strand the DoS near a bound for the whole lockout.
    SwitchWithheld,
}

/// The bid a device submits for the current control cycle.
///
/// Locked DP-GES and CP-GES between response-cycle boundaries bid their
/// current power at every price. An unlocked DP-GES bids a step at `S′`
/// unless staying put would push its DoS past a bound within the next cycle
/// (forced switch) or switching would strand it near a bound for the whole
/// lockout (switch withheld).
pub fn build_demand_curve(
    state: &DeviceState,
    params: &GesParams,
    env: &Env,
    ctx: &BidContext,
) -> Result<DemandCurve> {
    bid(state, params, env, ctx).map(|(curve, _)| curve)
}

/// [`build_demand_curve`] together with the rule that produced the bid.
pub fn bid(
    state: &DeviceState,
    params: &GesParams,
    env: &Env,
    ctx: &BidContext,
) -> Result<(DemandCurve, BidReason)> {
    let s = dos(state, params, ctx.time_h)?;
    if params.kind().is_continuous() {
        if state.hold_remaining_s > 0 {
            return Ok((DemandCurve::Flat(state.power_kw), BidReason::Hold));
        }
        let cp = characteristic_powers(state, params, env, ctx.t_p_h)?;
        return Ok((cp_curve(s, &cp)?, BidReason::Curve));
    }

    let p_on = params
        .on_power()
        .ok_or_else(|| Error::contract("discrete device without ON power"))?;
    let current = if state.on { p_on } else { 0.0 };
    if state.is_locked() {
        return Ok((DemandCurve::Flat(current), BidReason::Locked));
    }

    let step = unified_coeffs(params, env, ctx.control_dt_h)?;
    let s_stay = step.next_dos(current, s);
    if !state.on && s_stay > 1.0 {
        return Ok((DemandCurve::Flat(p_on), BidReason::ComfortOverride));
    }
    if state.on && s_stay < -1.0 {
        return Ok((DemandCurve::Flat(0.0), BidReason::ComfortOverride));
    }

    let lock_h = params.lockout_s() as f64 / SECONDS_PER_HOUR;
    if lock_h > 0.0 {
        let other = if state.on { 0.0 } else { p_on };
        let s_after = unified_coeffs(params, env, lock_h)?.next_dos(other, s);
        let bound = 1.0 - SWITCH_GUARD_MARGIN;
        if s_after.abs() > bound {
            return Ok((DemandCurve::Flat(current), BidReason::SwitchWithheld));
        }
    }

    let threshold = if state.on {
        (s + 1.0) / 2.0
    } else {
        (s - 1.0) / 2.0
    };
    Ok((
        DemandCurve::Step {
            threshold,
            high: p_on,
            low: 0.0,
        },
        BidReason::Curve,
    ))
}

/// Committed response to a broadcast price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub power_kw: f64,
    /// DP-GES changed its ON/OFF state.
    pub switched: bool,
}

/// Evaluates the device's own bid at the cleared price.
pub fn respond(
    state: &DeviceState,
    params: &GesParams,
    curve: &DemandCurve,
    lambda: f64,
) -> Result<Response> {
    let power_kw = curve.evaluate(lambda)?;
    let switched = !params.kind().is_continuous() && (power_kw > 0.0) != state.on;
    if switched && state.is_locked() {
        return Err(Error::contract("locked device asked to switch"));
    }
    Ok(Response { power_kw, switched })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{EesParams, FfaParams, IvaParams, TclParams};

    fn ees() -> GesParams {
        GesParams::Ees(EesParams {
            capacity_kwh: 45.0,
            p_nom_kw: 45.0,
            eta_charge: 0.9,
            eta_discharge: 0.9,
            e_min_kwh: 0.0,
            e_max_kwh: 45.0,
            t_res_s: 10,
        })
    }

    fn thermal() -> TclParams {
        TclParams {
            r_th: 1.25,
            c_th: 1.0,
            t_set: 25.0,
            t_dev: 2.5,
        }
    }

    fn iva() -> GesParams {
        GesParams::Iva(IvaParams {
            thermal: thermal(),
            p_min_kw: 0.45,
            p_max_kw: 5.5,
            p1: 0.03,
            p2: -0.4,
            q1: 0.06,
            q2: -0.3,
            t_res_s: 60,
        })
    }

    fn ffa() -> GesParams {
        GesParams::Ffa(FfaParams {
            thermal: thermal(),
            p_nom_kw: 5.0,
            cop: 3.5,
            t_lock_s: 300,
        })
    }

    #[test]
    fn ees_characteristic_powers() {
        let cp = characteristic_powers(&DeviceState::with_energy(45.0), &ees(), &Env::new(30.0), 1.0 / 12.0)
            .unwrap();
        assert_eq!(cp.p_const, 0.0);
        assert_eq!(cp.p_sat_max, 0.0);
        assert!((cp.p_sat_min + 0.9 * 45.0 * 12.0).abs() < 1e-9);
        assert_eq!((cp.p_opt_min, cp.p_opt_max), (-45.0, 45.0));
    }

    #[test]
    fn iva_at_upper_bound_has_const_equal_sat_min() {
        let cp = characteristic_powers(
            &DeviceState::with_temperature(27.5),
            &iva(),
            &Env::new(32.0),
            1.0 / 12.0,
        )
        .unwrap();
        assert!((cp.p_sat_min - cp.p_const).abs() < 1e-12);
        assert!(cp.p_sat_min <= cp.p_const && cp.p_const <= cp.p_sat_max);
    }

    #[test]
    fn dp_kinds_have_no_characteristic_powers() {
        let r = characteristic_powers(&DeviceState::with_temperature(25.0), &ffa(), &Env::new(32.0), 0.1);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn cp_curve_example() {
        let cp = CharacteristicPowers {
            p_const: 3.0,
            p_sat_min: 1.0,
            p_sat_max: 5.0,
            p_opt_min: -100.0,
            p_opt_max: 100.0,
        };
        let c = cp_curve(0.2, &cp).unwrap();
        assert_eq!(c.evaluate(0.2).unwrap(), 3.0);
        assert_eq!(c.evaluate(1.0).unwrap(), 1.0);
        assert_eq!(c.evaluate(-1.0).unwrap(), 5.0);
        assert!((c.evaluate(-0.4).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn cp_curve_clipped_to_operating_range() {
        let cp = CharacteristicPowers {
            p_const: 3.0,
            p_sat_min: 1.0,
            p_sat_max: 5.0,
            p_opt_min: 2.0,
            p_opt_max: 4.0,
        };
        let c = cp_curve(0.2, &cp).unwrap();
        assert_eq!(c.evaluate(-1.0).unwrap(), 4.0);
        assert_eq!(c.evaluate(-0.4).unwrap(), 4.0);
        assert!((c.evaluate(-0.1).unwrap() - 3.5).abs() < 1e-12);
        assert_eq!(c.evaluate(1.0).unwrap(), 2.0);
        assert_eq!(c.evaluate(0.6).unwrap(), 2.0);
    }

    #[test]
    fn dp_step_example() {
        // FFA ON at S = 0.2 → S' = 0.6.
        let mut state = DeviceState::with_temperature(25.5);
        state.on = true;
        state.power_kw = 5.0;
        let c = build_demand_curve(&state, &ffa(), &Env::new(32.0), &BidContext::new(0.0)).unwrap();
        match c {
            DemandCurve::Step { threshold, .. } => assert!((threshold - 0.6).abs() < 1e-12),
            other => panic!("expected step, got {other:?}"),
        }
        assert_eq!(c.evaluate(0.5).unwrap(), 5.0);
        assert_eq!(c.evaluate(0.7).unwrap(), 0.0);
        let r = respond(&state, &ffa(), &c, 0.7).unwrap();
        assert!(r.switched);
        assert_eq!(r.power_kw, 0.0);
    }

    #[test]
    fn locked_device_bids_flat() {
        let mut state = DeviceState::with_temperature(25.0);
        state.on = true;
        state.power_kw = 5.0;
        state.lock_remaining_s = 120;
        let c = build_demand_curve(&state, &ffa(), &Env::new(32.0), &BidContext::new(0.0)).unwrap();
        assert_eq!(c, DemandCurve::Flat(5.0));
    }

    #[test]
    fn holding_cp_device_bids_flat() {
        let mut state = DeviceState::with_temperature(25.0);
        state.power_kw = 2.4;
        state.hold_remaining_s = 30;
        let c = build_demand_curve(&state, &iva(), &Env::new(32.0), &BidContext::new(0.0)).unwrap();
        assert_eq!(c, DemandCurve::Flat(2.4));
    }

    #[test]
    fn off_device_at_upper_bound_is_forced_on() {
        let state = DeviceState::with_temperature(27.5);
        let c = build_demand_curve(&state, &ffa(), &Env::new(32.0), &BidContext::new(0.0)).unwrap();
        assert_eq!(c, DemandCurve::Flat(5.0));
    }

    #[test]
    fn cp_response_at_anchor_is_const() {
        let state = DeviceState::with_temperature(26.0);
        let env = Env::new(32.0);
        let c = build_demand_curve(&state, &iva(), &env, &BidContext::new(0.0)).unwrap();
        let cp = characteristic_powers(&state, &iva(), &env, 1.0 / 12.0).unwrap();
        let r = respond(&state, &iva(), &c, 0.4).unwrap();
        assert!((r.power_kw - cp.p_const).abs() <= 1e-9 * cp.p_const.abs());
        assert!(!r.switched);
    }
}
