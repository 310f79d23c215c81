//! Reduced-order aggregate model of the fleet:
//! `P_agg,k = M1 S_agg,k+1 + M2 S_agg,k + M3` with hourly power limits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::devices::{unified_coeffs, Device, Env, EvParams, GesKind, GesParams, UnifiedCoeffs};
use crate::error::{Error, Result};

/// Default share of an hour an EV must be plugged in to count in that hour's
/// model.
pub const EV_MEMBERSHIP_THRESHOLD: f64 = 0.5;

/// DP-GES sharing (rounded) coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpGroup {
    /// `m1`, `m2` rounded to six significant digits.
    pub key: (String, String),
    pub count: usize,
    /// Exact sum of the members' coefficients.
    pub sum: UnifiedCoeffs,
}

/// Coefficients and limits for one hour of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourModel {
    pub hour: usize,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub members: usize,
}

impl HourModel {
    pub fn power(&self, s_next: f64, s_now: f64) -> f64 {
        self.m1 * s_next + self.m2 * s_now + self.m3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateModel {
    /// First hour `n` of the horizon; `hours[j]` is hour `n + j`.
    pub start_hour: usize,
    pub hours: Vec<HourModel>,
    /// `Ŝ_agg` at the start of hour `n`.
    pub s_init: f64,
}

impl AggregateModel {
    pub fn horizon(&self) -> usize {
        self.hours.len()
    }
}

fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}

/// Sums coefficients of one hour's members: CP-GES directly, DP-GES by
/// coefficient group. Returns the total and the DP groups.
pub fn sum_coeffs(items: &[(GesKind, UnifiedCoeffs)]) -> (UnifiedCoeffs, Vec<DpGroup>) {
    let mut cp = UnifiedCoeffs {
        m1: 0.0,
        m2: 0.0,
        m3: 0.0,
    };
    let mut groups: BTreeMap<(String, String), DpGroup> = BTreeMap::new();
    for (kind, c) in items {
        if kind.is_continuous() {
            cp.m1 += c.m1;
            cp.m2 += c.m2;
            cp.m3 += c.m3;
        } else {
            let key = (sig6(c.m1), sig6(c.m2));
            let g = groups.entry(key.clone()).or_insert_with(|| DpGroup {
                key,
                count: 0,
                sum: UnifiedCoeffs {
                    m1: 0.0,
                    m2: 0.0,
                    m3: 0.0,
                },
            });
            g.count += 1;
            g.sum.m1 += c.m1;
            g.sum.m2 += c.m2;
            g.sum.m3 += c.m3;
        }
    }
    let groups: Vec<DpGroup> = groups.into_values().collect();
    let mut total = cp;
    for g in &groups {
        total.m1 += g.sum.m1;
        total.m2 += g.sum.m2;
        total.m3 += g.sum.m3;
    }
    (total, groups)
}

/// The EV session that covers most of the hour, if it meets the threshold.
fn ev_session_for_hour(device: &Device, hour_start_h: f64, threshold: f64) -> Option<EvParams> {
    let GesParams::Ev(current) = &device.params else {
        return None;
    };
    std::iter::once(current)
        .chain(device.upcoming_sessions.iter())
        .map(|s| {
            let lo = s.t_in_h.max(hour_start_h);
            let hi = s.t_dep_h.min(hour_start_h + 1.0);
            ((hi - lo).max(0.0), *s)
        })
        .filter(|(overlap, _)| *overlap >= threshold)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s)| s)
}

/// Parameters of `device` that apply during the hour starting at
/// `hour_start_h`, or `None` if it does not take part in that hour.
pub fn hour_params(device: &Device, hour_start_h: f64, ev_threshold: f64) -> Option<GesParams> {
    match device.params {
        GesParams::Ev(_) => ev_session_for_hour(device, hour_start_h, ev_threshold).map(GesParams::Ev),
        p => Some(p),
    }
}

/// Builds the aggregate model for hours `start_hour..end_hour`.
///
/// `outdoor_forecast[h]` is the mean outdoor temperature of hour `h`; the
/// coefficients use a one-hour step.
pub fn build_model(
    devices: &[Device],
    start_hour: usize,
    end_hour: usize,
    outdoor_forecast: &[f64],
    s_init: f64,
    ev_threshold: f64,
) -> Result<AggregateModel> {
    if end_hour < start_hour {
        return Err(Error::invalid("horizon end precedes start"));
    }
    if outdoor_forecast.len() < end_hour {
        return Err(Error::invalid(format!(
            "outdoor forecast covers {} hours, need {end_hour}",
            outdoor_forecast.len()
        )));
    }
    let mut hours = Vec::with_capacity(end_hour - start_hour);
    for hour in start_hour..end_hour {
        let env = Env::new(outdoor_forecast[hour]);
        let mut items = Vec::with_capacity(devices.len());
        let (mut p_min, mut p_max) = (0.0, 0.0);
        for d in devices {
            let Some(params) = hour_params(d, hour as f64, ev_threshold) else {
                continue;
            };
            items.push((params.kind(), unified_coeffs(&params, &env, 1.0)?));
            let (lo, hi) = params.operational_limits();
            p_min += lo;
            p_max += hi;
        }
        let (total, _) = sum_coeffs(&items);
        hours.push(HourModel {
            hour,
            m1: total.m1,
            m2: total.m2,
            m3: total.m3,
            p_min,
            p_max,
            members: items.len(),
        });
    }
    Ok(AggregateModel {
        start_hour,
        hours,
        s_init,
    })
}

/// Power limits of the devices currently on-grid.
pub fn fleet_limits(devices: &[Device]) -> (f64, f64) {
    devices
        .iter()
        .filter(|d| d.state.online)
        .map(|d| d.params.operational_limits())
        .fold((0.0, 0.0), |(lo, hi), (a, b)| (lo + a, hi + b))
}

/// Mean DoS of the on-grid devices, 0 for an empty fleet.
pub fn init_s_agg(devices: &[Device], time_h: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for d in devices.iter().filter(|d| d.state.online) {
        sum += d.dos(time_h)?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
