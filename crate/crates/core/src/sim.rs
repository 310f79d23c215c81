//! Closed-loop day simulation: hourly rolling optimization, virtual-market
//! clearing every control cycle, and autonomous device response.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{build_model, fleet_limits, init_s_agg};
use crate::config::{Dist, FleetSpec, RunConfig, SeriesSource};
use crate::devices::{
    bid, characteristic_powers, ev_expected_energy, respond, unified_coeffs, BidContext, BidReason, Device,
    DeviceState, EesParams, Env, EvParams, FfaParams, GesKind, GesParams, IvaParams, TclParams,
};
use crate::error::{Error, Result};
use crate::market::{aggregate, clear, DemandCurve};
use crate::metrics::{cost_report, performance_score, tracking_rms, CostReport, PerfScore, Realized};
use crate::optimizer::{solve_mode, MarketPrices, Mode};
use crate::signals::{
    hourly_means, load_csv, read_csv, resample, synth_regd, Interp, RegDSignal, TimeSeries,
};

/// The optimization horizon always runs to the end of the day.
pub const DAY_HOURS: usize = 24;
/// Overshoot of a TCL past its comfort band that counts as a violation.
pub const COMFORT_TOLERANCE_C: f64 = 0.1;
/// Hours committing less regulation capacity than this are not scored.
pub const SCORED_CAPACITY_KW: f64 = 1e-3;

fn draw(d: &Dist, rng: &mut ChaCha8Rng) -> f64 {
    match *d {
        Dist::Fixed(v) => v,
        Dist::Uniform([lo, hi]) => lo + (hi - lo) * rng.random::<f64>(),
    }
}

fn quantize_h(t_h: f64, dt_s: u32) -> f64 {
    let step = dt_s as f64;
    (t_h * 3600.0 / step).round() * step / 3600.0
}

fn thermal(spec: [&Dist; 4], rng: &mut ChaCha8Rng) -> TclParams {
    TclParams {
        r_th: draw(spec[0], rng),
        c_th: draw(spec[1], rng),
        t_set: draw(spec[2], rng),
        t_dev: draw(spec[3], rng),
    }
}

/// Probability that a DP-GES at DoS 0 is ON in a steady duty cycle: the
/// share of the cycle spent in the (faster or slower) ON phase.
fn duty_fraction(params: &GesParams, env: &Env, dt_h: f64) -> Result<f64> {
    let p_on = params
        .on_power()
        .ok_or_else(|| Error::contract("duty cycle of a continuous device"))?;
    let c = unified_coeffs(params, env, dt_h)?;
    let v_on = -c.next_dos(p_on, 0.0);
    let v_off = c.next_dos(0.0, 0.0);
    Ok(if v_off <= 0.0 {
        0.0
    } else if v_on <= 0.0 {
        1.0
    } else {
        v_off / (v_on + v_off)
    })
}

/// Draws every device of the fleet. Devices are numbered EES, EV, IVA, FFA
/// in that order and each device's parameters are drawn consecutively.
///
/// Each EV starts in an overnight session that began the previous evening
/// and returns for a second session the same evening; both share the drawn
/// habits. Session times are rounded to the control period. A DP-GES starts
/// ON with its steady duty-cycle probability at `outdoor_c`.
pub fn sample_fleet(
    spec: &FleetSpec,
    seed: u64,
    control_dt_s: u32,
    outdoor_c: f64,
) -> Result<Vec<Device>> {
    spec.validate()?;
    if control_dt_s == 0 {
        return Err(Error::Config("control period must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut devices = Vec::with_capacity(spec.device_count());
    let env = Env::new(outdoor_c);
    let dt_h = control_dt_s as f64 / 3600.0;

    for _ in 0..spec.ees.count {
        let e = &spec.ees;
        let capacity_kwh = draw(&e.capacity_kwh, &mut rng);
        let p = EesParams {
            capacity_kwh,
            p_nom_kw: draw(&e.p_nom_kw, &mut rng),
            eta_charge: draw(&e.eta_charge, &mut rng),
            eta_discharge: draw(&e.eta_discharge, &mut rng),
            e_min_kwh: 0.0,
            e_max_kwh: capacity_kwh,
            t_res_s: e.t_res_s,
        };
        let soc = draw(&e.soc_init, &mut rng);
        let state = DeviceState::with_energy(soc * capacity_kwh);
        devices.push(Device::new(devices.len(), GesParams::Ees(p), state)?);
    }

    for _ in 0..spec.ev.count {
        let e = &spec.ev;
        let capacity_kwh = draw(&e.capacity_kwh, &mut rng);
        let p_nom_kw = draw(&e.p_nom_kw, &mut rng);
        let eta = draw(&e.eta, &mut rng);
        let t_in = quantize_h(draw(&e.t_in_h, &mut rng), control_dt_s);
        let t_dep = quantize_h(draw(&e.t_dep_h, &mut rng), control_dt_s);
        let soc_in = draw(&e.soc_in, &mut rng);
        let soc_tar = draw(&e.soc_tar, &mut rng);
        let s0 = draw(&e.dos_init, &mut rng);
        let evening = EvParams {
            capacity_kwh,
            p_nom_kw,
            eta,
            t_in_h: t_in,
            t_dep_h: t_dep + 24.0,
            e_in_kwh: soc_in * capacity_kwh,
            e_tar_kwh: soc_tar * capacity_kwh,
            deadband_pct: e.deadband_pct,
            t_lock_s: e.t_lock_s,
        };
        GesParams::Ev(evening).validate()?;
        let overnight = EvParams {
            t_in_h: t_in - 24.0,
            t_dep_h: t_dep,
            ..evening
        };
        let energy = ev_expected_energy(&overnight, 0.0)? - s0 * overnight.deadband_kwh();
        let on = rng.random_bool(duty_fraction(&GesParams::Ev(overnight), &env, dt_h)?);
        let mut state = DeviceState::with_energy(energy);
        state.on = on;
        state.power_kw = if on { p_nom_kw } else { 0.0 };
        let mut d = Device::new(devices.len(), GesParams::Ev(overnight), state)?;
        d.upcoming_sessions.push(evening);
        devices.push(d);
    }

    for _ in 0..spec.iva.count {
        let s = &spec.iva;
        let th = thermal([&s.r_th, &s.c_th, &s.t_set, &s.t_dev], &mut rng);
        let p = IvaParams {
            thermal: th,
            p_min_kw: draw(&s.p_min_kw, &mut rng),
            p_max_kw: draw(&s.p_max_kw, &mut rng),
            p1: s.p1,
            p2: s.p2,
            q1: s.q1,
            q2: s.q2,
            t_res_s: s.t_res_s,
        };
        let s0 = draw(&s.dos_init, &mut rng);
        let phases = (s.t_res_s / control_dt_s).max(1);
        let mut state = DeviceState::with_temperature(th.t_set + s0 * th.t_dev);
        state.hold_remaining_s = rng.random_range(0..phases) * control_dt_s;
        devices.push(Device::new(devices.len(), GesParams::Iva(p), state)?);
    }

    for _ in 0..spec.ffa.count {
        let s = &spec.ffa;
        let th = thermal([&s.r_th, &s.c_th, &s.t_set, &s.t_dev], &mut rng);
        let p = FfaParams {
            thermal: th,
            p_nom_kw: draw(&s.p_nom_kw, &mut rng),
            cop: draw(&s.cop, &mut rng),
            t_lock_s: s.t_lock_s,
        };
        let s0 = draw(&s.dos_init, &mut rng);
        let on = rng.random_bool(duty_fraction(&GesParams::Ffa(p), &env, dt_h)?);
        let mut state = DeviceState::with_temperature(th.t_set + s0 * th.t_dev);
        state.on = on;
        state.power_kw = if on { p.p_nom_kw } else { 0.0 };
        devices.push(Device::new(devices.len(), GesParams::Ffa(p), state)?);
    }
    Ok(devices)
}

/// Bundled sample day.
mod sample {
    pub const ENERGY_PRICE: &str = include_str!("../data/energy_price.csv");
    pub const CAPACITY_PRICE: &str = include_str!("../data/capacity_price.csv");
    pub const MILEAGE_PRICE: &str = include_str!("../data/mileage_price.csv");
    pub const OUTDOOR_TEMP: &str = include_str!("../data/outdoor_temp.csv");
}

/// Text of the bundled sample scenario file.
pub const SAMPLE_SCENARIO: &str = include_str!("../data/sample.toml");

#[derive(Clone, Copy)]
enum SeriesKind {
    EnergyPrice,
    CapacityPrice,
    MileagePrice,
    OutdoorTemp,
    RegD,
}

impl SeriesKind {
    fn name(self) -> &'static str {
        match self {
            SeriesKind::EnergyPrice => "energy_price",
            SeriesKind::CapacityPrice => "capacity_price",
            SeriesKind::MileagePrice => "mileage_price",
            SeriesKind::OutdoorTemp => "outdoor_temp",
            SeriesKind::RegD => "regd",
        }
    }

    /// Accepted units with their factor to the internal unit (first entry).
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            SeriesKind::EnergyPrice => &[("USD/kWh", 1.0), ("USD/MWh", 1e-3)],
            SeriesKind::CapacityPrice => &[("USD/kW/h", 1.0), ("USD/MW/h", 1e-3)],
            SeriesKind::MileagePrice => &[("USD/kW", 1.0), ("USD/MW", 1e-3)],
            SeriesKind::OutdoorTemp => &[("degC", 1.0)],
            SeriesKind::RegD => &[("pu", 1.0)],
        }
    }

    fn bundled(self) -> Option<&'static str> {
        match self {
            SeriesKind::EnergyPrice => Some(sample::ENERGY_PRICE),
            SeriesKind::CapacityPrice => Some(sample::CAPACITY_PRICE),
            SeriesKind::MileagePrice => Some(sample::MILEAGE_PRICE),
            SeriesKind::OutdoorTemp => Some(sample::OUTDOOR_TEMP),
            SeriesKind::RegD => None,
        }
    }
}

/// Loads a configured series, or the bundled one, in internal units.
fn load_series(kind: SeriesKind, src: Option<&SeriesSource>) -> Result<Option<TimeSeries>> {
    let units = kind.units();
    let mut series = match src {
        Some(src) => {
            let Some(&(_, factor)) = units.iter().find(|(u, _)| *u == src.unit) else {
                let known: Vec<&str> = units.iter().map(|(u, _)| *u).collect();
                return Err(Error::Config(format!(
                    "series.{}: unsupported unit '{}' (expected one of {})",
                    kind.name(),
                    src.unit,
                    known.join(", ")
                )));
            };
            let mut s = load_csv(&src.path, &src.unit)?;
            s.values.iter_mut().for_each(|v| *v *= factor);
            s
        }
        None => match kind.bundled() {
            Some(text) => read_csv(text.as_bytes(), &format!("<bundled {}>", kind.name()), units[0].0)?,
            None => return Ok(None),
        },
    };
    series.unit = units[0].0.to_string();
    Ok(Some(series))
}

fn hourly(kind: SeriesKind, src: Option<&SeriesSource>) -> Result<Vec<f64>> {
    let s = load_series(kind, src)?.ok_or_else(|| Error::contract("series has no fallback"))?;
    hourly_means(&s, DAY_HOURS).map_err(|e| Error::Config(format!("series.{}: {e}", kind.name())))
}

/// Everything a run needs, fully materialized.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mode: Mode,
    /// Simulated hours from midnight.
    pub hours: usize,
    pub control_dt_s: u32,
    pub t_p_s: u32,
    pub ev_membership: f64,
    pub devices: Vec<Device>,
    pub prices: MarketPrices,
    /// Outdoor temperature at the control period.
    pub outdoor: TimeSeries,
    /// Hourly mean outdoor temperature seen by the optimizer.
    pub outdoor_forecast: Vec<f64>,
    /// regD at the control period.
    pub regd: RegDSignal,
}

impl Scenario {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let c = &cfg.constants;
        let s = &cfg.series;
        let dt = c.control_dt_s;
        let prices = MarketPrices {
            energy: hourly(SeriesKind::EnergyPrice, s.energy_price.as_ref())?,
            capacity: hourly(SeriesKind::CapacityPrice, s.capacity_price.as_ref())?,
            mileage: hourly(SeriesKind::MileagePrice, s.mileage_price.as_ref())?,
            score: c.omega_score,
            mileage_ratio: c.omega_mile,
            penalty_scale: c.omega_scale,
        };
        let temp = load_series(SeriesKind::OutdoorTemp, s.outdoor_temp.as_ref())?
            .ok_or_else(|| Error::contract("outdoor temperature has no fallback"))?;
        let outdoor = resample(&temp, dt, Interp::Linear)
            .map_err(|e| Error::Config(format!("series.outdoor_temp: {e}")))?;
        let outdoor_forecast = hourly_means(&outdoor, DAY_HOURS)
            .map_err(|e| Error::Config(format!("series.outdoor_temp: {e}")))?;
        let regd = match load_series(SeriesKind::RegD, s.regd.as_ref())? {
            Some(raw) => {
                let interp = if raw.period_s > dt { Interp::Linear } else { Interp::Hold };
                let at_dt = resample(&raw, dt, interp)
                    .map_err(|e| Error::Config(format!("series.regd: {e}")))?;
                RegDSignal::from_series(at_dt)?
            }
            None => synth_regd(cfg.run.regd_seed, DAY_HOURS, dt)?,
        };
        let devices = sample_fleet(&cfg.fleet, cfg.run.seed, dt, outdoor.values[0])?;
        let sc = Scenario {
            mode: cfg.run.mode,
            hours: cfg.run.hours,
            control_dt_s: dt,
            t_p_s: c.t_p_s,
            ev_membership: c.ev_membership,
            devices,
            prices,
            outdoor,
            outdoor_forecast,
            regd,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// The bundled sample scenario in the given mode.
    pub fn sample(mode: Mode) -> Result<Self> {
        let mut cfg = RunConfig::from_toml(SAMPLE_SCENARIO)?;
        cfg.run.mode = mode;
        Self::from_config(&cfg)
    }

    pub fn cycles_per_hour(&self) -> usize {
        (3600 / self.control_dt_s) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_dt_s == 0 || 3600 % self.control_dt_s != 0 {
            return Err(Error::Config("control period must divide one hour".into()));
        }
        if self.hours == 0 || self.hours > DAY_HOURS {
            return Err(Error::Config(format!("hours must lie in 1..={DAY_HOURS}")));
        }
        self.prices
            .validate(DAY_HOURS)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.outdoor_forecast.len() < DAY_HOURS {
            return Err(Error::Config("outdoor forecast must cover the day".into()));
        }
        let need = self.hours * self.cycles_per_hour();
        if self.outdoor.period_s != self.control_dt_s || self.outdoor.len() < need {
            return Err(Error::Config(format!(
                "outdoor temperature must cover {} h at {} s",
                self.hours, self.control_dt_s
            )));
        }
        if self.regd.series.period_s != self.control_dt_s || self.regd.series.len() < need {
            return Err(Error::Config(format!(
                "regD must cover {} h at {} s",
                self.hours, self.control_dt_s
            )));
        }
        if self.devices.is_empty() {
            return Err(Error::Config("the fleet is empty".into()));
        }
        Ok(())
    }
}

/// One control cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// Start of the cycle, seconds from midnight.
    pub time_s: u64,
    pub p_sch_kw: f64,
    pub c_reg_kw: f64,
    pub regd: f64,
    pub p_tar_kw: f64,
    pub lambda: f64,
    pub saturated: bool,
    /// Sum of the committed device powers.
    pub p_agg_kw: f64,
    /// Power limits of the on-grid fleet.
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub outdoor_c: f64,
    /// Mean DoS per kind at the end of the cycle, indexed by `GesKind::index`.
    pub s_avg: [Option<f64>; 4],
}

/// One optimization cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub hour: usize,
    pub p_sch_kw: f64,
    pub c_reg_kw: f64,
    /// Measured `Ŝ_agg` the optimization started from.
    pub s_hat: f64,
    /// `S_agg` the model predicts for the end of the hour.
    pub s_pred: f64,
    /// Mean DoS of the on-grid fleet at the end of the hour.
    pub s_real: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub members: usize,
    pub objective: f64,
    pub kkt_max: f64,
    pub iterations: usize,
    pub p_agg_mean_kw: f64,
    pub p_tar_mean_kw: f64,
    pub regd_mileage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// `value`: lockout started, s.
    SwitchOn,
    SwitchOff,
    /// A switch forced by the comfort bound; `value`: DoS before it.
    ComfortOverride,
    /// `value`: energy on arrival, kWh.
    Arrival,
    /// `value`: energy on departure, kWh.
    Departure,
    /// `value`: temperature beyond the comfort band, °C.
    ComfortViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_s: u64,
    pub device: usize,
    pub kind: GesKind,
    pub event: EventKind,
    pub value: f64,
}

/// An EV leaving at the end of a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Departure {
    pub device: usize,
    pub t_in_h: f64,
    pub t_dep_h: f64,
    pub e_final_kwh: f64,
    pub e_tar_kwh: f64,
    pub band_kwh: f64,
}

/// State of one traced device at the end of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_s: u64,
    pub device: usize,
    pub kind: GesKind,
    pub power_kw: f64,
    pub dos: Option<f64>,
    pub energy_kwh: Option<f64>,
    pub indoor_temp_c: Option<f64>,
    /// EV energy corridor centre.
    pub e_expected_kwh: Option<f64>,
    pub band_kwh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub control_dt_s: u32,
    pub cycles: Vec<CycleRecord>,
    pub hours: Vec<HourRecord>,
    pub events: Vec<Event>,
    pub departures: Vec<Departure>,
    pub traces: Vec<TraceRecord>,
    /// Largest temperature excursion beyond any TCL's comfort band, °C
    /// (negative when all stayed inside).
    pub max_comfort_excess_c: f64,
}

/// Realized regulation performance of a scored hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourScore {
    pub hour: usize,
    pub capacity_kw: f64,
    pub score: PerfScore,
    pub mileage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub mode: Mode,
    pub log: RunLog,
    pub costs: CostReport,
    pub scores: Vec<HourScore>,
    /// RMS of `|P_agg − P_tar|` relative to the fleet power range.
    pub tracking_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvVerdict {
    pub device: usize,
    pub t_dep_h: f64,
    pub deviation_kwh: f64,
    pub band_kwh: f64,
    pub ok: bool,
}

/// Checks every completed EV session against its energy deadband.
pub fn ev_final_energy_check(log: &RunLog) -> Vec<EvVerdict> {
    log.departures
        .iter()
        .map(|d| {
            let deviation_kwh = d.e_final_kwh - d.e_tar_kwh;
            EvVerdict {
                device: d.device,
                t_dep_h: d.t_dep_h,
                deviation_kwh,
                band_kwh: d.band_kwh,
                ok: deviation_kwh.abs() <= d.band_kwh + 1e-9,
            }
        })
        .collect()
}

/// Switches that happened before the previous switch's lockout expired, as
/// `(device, time_s)`.
pub fn lockout_violations(log: &RunLog) -> Vec<(usize, u64)> {
    let mut last: BTreeMap<usize, (u64, f64)> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &log.events {
        if !matches!(e.event, EventKind::SwitchOn | EventKind::SwitchOff) {
            continue;
        }
        if let Some(&(t, lock)) = last.get(&e.device) {
            if ((e.time_s - t) as f64) < lock {
                out.push((e.device, e.time_s));
            }
        }
        last.insert(e.device, (e.time_s, e.value));
    }
    out
}

fn secs(t_h: f64) -> i64 {
    (t_h * 3600.0).round() as i64
}

enum PriceRule {
    Clear(f64),
    Fixed(f64),
}

struct CycleOutcome {
    lambda: f64,
    saturated: bool,
    p_agg: f64,
    p_min: f64,
    p_max: f64,
    outdoor: f64,
    s_avg: [Option<f64>; 4],
}

struct Engine<'a> {
    sc: &'a Scenario,
    devices: Vec<Device>,
    log: RunLog,
    trace_ids: Vec<usize>,
    curves: Vec<DemandCurve>,
    bidders: Vec<(usize, BidReason)>,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Result<Self> {
        let mut devices = sc.devices.clone();
        let env = Self::env(sc, 0)?;
        let t_p_h = sc.t_p_s as f64 / 3600.0;
        // CP-GES start at their holding power.
        for d in devices
            .iter_mut()
            .filter(|d| d.kind().is_continuous() && d.state.online)
        {
            let cp = characteristic_powers(&d.state, &d.params, &env, t_p_h)?;
            d.state.power_kw = cp.p_const.clamp(cp.p_opt_min, cp.p_opt_max);
        }
        let trace_ids = GesKind::ALL
            .iter()
            .filter_map(|k| devices.iter().find(|d| d.kind() == *k).map(|d| d.id))
            .collect();
        Ok(Engine {
            sc,
            devices,
            log: RunLog {
                control_dt_s: sc.control_dt_s,
                max_comfort_excess_c: f64::NEG_INFINITY,
                ..Default::default()
            },
            trace_ids,
            curves: Vec::new(),
            bidders: Vec::new(),
        })
    }

    fn env(sc: &Scenario, t_s: u64) -> Result<Env> {
        sc.outdoor
            .at_offset(t_s)
            .map(Env::new)
            .ok_or_else(|| Error::invalid(format!("outdoor temperature ends before {t_s} s")))
    }

    /// EV departures and arrivals due at `t_s`.
    fn sessions(&mut self, t_s: u64) -> Result<()> {
        let now = t_s as i64;
        for d in &mut self.devices {
            let GesParams::Ev(cur) = d.params else {
                continue;
            };
            if d.state.online && now >= secs(cur.t_dep_h) {
                self.log.departures.push(Departure {
                    device: d.id,
                    t_in_h: cur.t_in_h,
                    t_dep_h: cur.t_dep_h,
                    e_final_kwh: d.state.energy_kwh,
                    e_tar_kwh: cur.e_tar_kwh,
                    band_kwh: cur.deadband_kwh(),
                });
                self.log.events.push(Event {
                    time_s: t_s,
                    device: d.id,
                    kind: GesKind::Ev,
                    event: EventKind::Departure,
                    value: d.state.energy_kwh,
                });
                d.state.online = false;
                d.state.on = false;
                d.state.power_kw = 0.0;
                d.state.lock_remaining_s = 0;
            }
            if !d.state.online
                && d
                    .upcoming_sessions
                    .first()
                    .is_some_and(|next| now >= secs(next.t_in_h))
            {
                let next = d.upcoming_sessions.remove(0);
                d.params = GesParams::Ev(next);
                d.state.energy_kwh = next.e_in_kwh;
                d.state.online = true;
                d.state.on = false;
                d.state.power_kw = 0.0;
                d.state.lock_remaining_s = 0;
                self.log.events.push(Event {
                    time_s: t_s,
                    device: d.id,
                    kind: GesKind::Ev,
                    event: EventKind::Arrival,
                    value: next.e_in_kwh,
                });
            }
        }
        Ok(())
    }

    fn cycle(&mut self, t_s: u64, rule: PriceRule) -> Result<CycleOutcome> {
        let dt = self.sc.control_dt_s;
        let time_h = t_s as f64 / 3600.0;
        let env = Self::env(self.sc, t_s)?;
        self.sessions(t_s)?;
        let ctx = BidContext {
            time_h,
            t_p_h: self.sc.t_p_s as f64 / 3600.0,
            control_dt_h: dt as f64 / 3600.0,
        };

        self.curves.clear();
        self.bidders.clear();
        for (i, d) in self.devices.iter().enumerate() {
            if !d.state.online {
                continue;
            }
            let (curve, reason) = bid(&d.state, &d.params, &env, &ctx)?;
            self.curves.push(curve);
            self.bidders.push((i, reason));
        }
        let (lambda, saturated) = match rule {
            PriceRule::Clear(target) => {
                let r = clear(&aggregate(&self.curves)?, target)?;
                (r.lambda, r.saturated)
            }
            PriceRule::Fixed(lambda) => (lambda, false),
        };

        for (curve, &(i, reason)) in self.curves.iter().zip(&self.bidders) {
            let d = &mut self.devices[i];
            let resp = respond(&d.state, &d.params, curve, lambda)?;
            let s_before = d.dos(time_h)?;
            if d.commit(resp) {
                let mut ev = Event {
                    time_s: t_s,
                    device: d.id,
                    kind: d.kind(),
                    event: if d.state.on {
                        EventKind::SwitchOn
                    } else {
                        EventKind::SwitchOff
                    },
                    value: d.params.lockout_s() as f64,
                };
                self.log.events.push(ev);
                if reason == BidReason::ComfortOverride {
                    ev.event = EventKind::ComfortOverride;
                    ev.value = s_before;
                    self.log.events.push(ev);
                }
            }
        }
        let p_agg: f64 = self.devices.iter().map(|d| d.state.power_kw).sum();
        let (p_min, p_max) = fleet_limits(&self.devices);

        let t_next = t_s + dt as u64;
        let time_next = t_next as f64 / 3600.0;
        let mut sums = [(0.0, 0usize); 4];
        for d in &mut self.devices {
            d.advance(dt, &env)?;
            if let Some(th) = d.params.thermal() {
                let excess = (d.state.indoor_temp_c - th.t_set).abs() - th.t_dev;
                self.log.max_comfort_excess_c = self.log.max_comfort_excess_c.max(excess);
                if excess > COMFORT_TOLERANCE_C {
                    self.log.events.push(Event {
                        time_s: t_next,
                        device: d.id,
                        kind: d.kind(),
                        event: EventKind::ComfortViolation,
                        value: excess,
                    });
                }
            }
            if d.state.online {
                let e = &mut sums[d.kind().index()];
                e.0 += d.dos(time_next)?;
                e.1 += 1;
            }
        }
        for &id in &self.trace_ids {
            let d = &self.devices[id];
            let online = d.state.online;
            let ev = match d.params {
                GesParams::Ev(p) if online => Some(p),
                _ => None,
            };
            self.log.traces.push(TraceRecord {
                time_s: t_next,
                device: id,
                kind: d.kind(),
                power_kw: d.state.power_kw,
                dos: if online { Some(d.dos(time_next)?) } else { None },
                energy_kwh: d.state.energy_kwh.is_finite().then_some(d.state.energy_kwh),
                indoor_temp_c: d.state.indoor_temp_c.is_finite().then_some(d.state.indoor_temp_c),
                e_expected_kwh: ev.map(|p| ev_expected_energy(&p, time_next)).transpose()?,
                band_kwh: ev.map(|p| p.deadband_kwh()),
            });
        }
        let s_avg = sums.map(|(s, n)| (n > 0).then(|| s / n as f64));
        Ok(CycleOutcome {
            lambda,
            saturated,
            p_agg,
            p_min,
            p_max,
            outdoor: env.outdoor_temp_c,
            s_avg,
        })
    }
}

/// Runs the scenario: one optimization per hour, one clearing per control
/// cycle. The baseline mode dispatches `P_base` as the target.
pub fn run(sc: &Scenario) -> Result<RunOutput> {
    sc.validate()?;
    let mut eng = Engine::new(sc)?;
    let n = sc.cycles_per_hour();
    let dt = sc.control_dt_s as u64;
    let mut committed = Vec::with_capacity(sc.hours);
    let mut realized = Vec::with_capacity(sc.hours);
    let mut scores = Vec::new();

    for hour in 0..sc.hours {
        let t0 = hour as u64 * 3600;
        eng.sessions(t0)?;
        let s_hat = init_s_agg(&eng.devices, hour as f64)?.clamp(-1.0, 1.0);
        let model = build_model(
            &eng.devices,
            hour,
            DAY_HOURS,
            &sc.outdoor_forecast,
            s_hat,
            sc.ev_membership,
        )?;
        let sched = solve_mode(&model, &sc.prices, sc.mode)?;
        let (p_sch, c_reg) = (sched.power[0], sched.capacity[0]);
        log::debug!(
            "hour {hour}: P_sch = {p_sch:.2} kW, C_reg = {c_reg:.2} kW, S_hat = {s_hat:.4}, {} iterations",
            sched.iterations
        );

        let first = eng.log.cycles.len();
        for c in 0..n {
            let t_s = t0 + c as u64 * dt;
            let regd = sc.regd.series.values[hour * n + c];
            let p_tar = p_sch + regd * c_reg;
            let o = eng.cycle(t_s, PriceRule::Clear(p_tar))?;
            eng.log.cycles.push(CycleRecord {
                time_s: t_s,
                p_sch_kw: p_sch,
                c_reg_kw: c_reg,
                regd,
                p_tar_kw: p_tar,
                lambda: o.lambda,
                saturated: o.saturated,
                p_agg_kw: o.p_agg,
                p_min_kw: o.p_min,
                p_max_kw: o.p_max,
                outdoor_c: o.outdoor,
                s_avg: o.s_avg,
            });
        }
        let cycles = &eng.log.cycles[first..];
        let mean = |f: fn(&CycleRecord) -> f64| cycles.iter().map(f).sum::<f64>() / n as f64;
        let mileage = sc.regd.hourly_mileage.get(hour).copied().unwrap_or(0.0);
        let s_real = init_s_agg(&eng.devices, (hour + 1) as f64)?;
        let hm = &model.hours[0];
        eng.log.hours.push(HourRecord {
            hour,
            p_sch_kw: p_sch,
            c_reg_kw: c_reg,
            s_hat,
            s_pred: sched.s_agg[0],
            s_real,
            p_min_kw: hm.p_min,
            p_max_kw: hm.p_max,
            members: hm.members,
            objective: sched.objective,
            kkt_max: sched.kkt.max(),
            iterations: sched.iterations,
            p_agg_mean_kw: mean(|r| r.p_agg_kw),
            p_tar_mean_kw: mean(|r| r.p_tar_kw),
            regd_mileage: mileage,
        });

        committed.push((hour, p_sch, c_reg));
        if c_reg > SCORED_CAPACITY_KW {
            let target: Vec<f64> = cycles.iter().map(|r| r.regd * c_reg).collect();
            let response: Vec<f64> = cycles.iter().map(|r| r.p_agg_kw - p_sch).collect();
            let score = performance_score(&target, &response, sc.control_dt_s)?;
            scores.push(HourScore {
                hour,
                capacity_kw: c_reg,
                score,
                mileage,
            });
            realized.push(Some(Realized {
                score: score.composite,
                mileage,
            }));
        } else {
            realized.push(None);
        }
    }

    let costs = cost_report(&committed, &sc.prices, Some(&realized));
    let cyc = &eng.log.cycles;
    let tracking = tracking_rms(
        &cyc.iter().map(|r| r.p_tar_kw).collect::<Vec<_>>(),
        &cyc.iter().map(|r| r.p_agg_kw).collect::<Vec<_>>(),
        &cyc.iter().map(|r| r.p_max_kw - r.p_min_kw).collect::<Vec<_>>(),
    );
    Ok(RunOutput {
        mode: sc.mode,
        log: eng.log,
        costs,
        scores,
        tracking_rms: tracking,
    })
}

/// Broadcasts a fixed virtual price to the whole fleet for `duration_s`
/// starting at `start_s` (with the fleet in its initial state), bypassing
/// the market, and returns the `(kind, DoS)` of every on-grid device at the
/// end.
pub fn hold_price(
    sc: &Scenario,
    lambda: f64,
    start_s: u64,
    duration_s: u64,
) -> Result<Vec<(GesKind, f64)>> {
    if !(-1.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("virtual price {lambda} outside [-1, 1]")));
    }
    let mut eng = Engine::new(sc)?;
    let dt = sc.control_dt_s as u64;
    let mut t = start_s;
    while t < start_s + duration_s {
        eng.cycle(t, PriceRule::Fixed(lambda))?;
        t += dt;
    }
    let time_h = t as f64 / 3600.0;
    eng.devices
        .iter()
        .filter(|d| d.state.online)
        .map(|d| Ok((d.kind(), d.dos(time_h)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(mode: Mode) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.run.mode = mode;
        cfg.run.hours = 2;
        cfg.fleet.ees.count = 2;
        cfg.fleet.ev.count = 3;
        cfg.fleet.iva.count = 10;
        cfg.fleet.ffa.count = 10;
        cfg
    }

    #[test]
    fn reference_fleet_counts() {
        let f = sample_fleet(&FleetSpec::default(), 1, 10, 30.0).unwrap();
        assert_eq!(f.len(), 230);
        let count = |k| f.iter().filter(|d| d.kind() == k).count();
        assert_eq!(
            [GesKind::Ees, GesKind::Ev, GesKind::Iva, GesKind::Ffa].map(count),
            [10, 20, 100, 100]
        );
        assert!(f.iter().enumerate().all(|(i, d)| d.id == i));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_fleet(&FleetSpec::default(), 9, 10, 30.0).unwrap();
        let b = sample_fleet(&FleetSpec::default(), 9, 10, 30.0).unwrap();
        // Unused state fields are NaN, so compare renderings.
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = sample_fleet(&FleetSpec::default(), 10, 10, 30.0).unwrap();
        assert_ne!(format!("{a:?}"), format!("{c:?}"));
    }

    #[test]
    fn degenerate_distribution() {
        let mut spec = FleetSpec::default();
        spec.ffa.cop = Dist::Uniform([3.5, 3.5]);
        spec.ffa.r_th = Dist::Fixed(1.2);
        let f = sample_fleet(&spec, 3, 10, 30.0).unwrap();
        for d in f.iter().filter(|d| d.kind() == GesKind::Ffa) {
            let GesParams::Ffa(p) = d.params else { unreachable!() };
            assert_eq!(p.cop, 3.5);
            assert_eq!(p.thermal.r_th, 1.2);
        }
    }

    #[test]
    fn ev_sessions_wrap_midnight() {
        let f = sample_fleet(&FleetSpec::default(), 4, 10, 30.0).unwrap();
        for d in f.iter().filter(|d| d.kind() == GesKind::Ev) {
            let GesParams::Ev(cur) = d.params else { unreachable!() };
            assert!(cur.t_in_h < 0.0 && cur.t_dep_h > 0.0);
            assert!(d.state.online);
            let next = d.upcoming_sessions[0];
            assert!(next.t_in_h >= 18.0 && next.t_dep_h > 24.0);
            // Times sit on the control grid.
            assert!(((next.t_in_h * 360.0).round() - next.t_in_h * 360.0).abs() < 1e-9);
            let s = d.dos(0.0).unwrap();
            assert!(s.abs() <= 0.8 + 1e-9);
        }
    }

    #[test]
    fn invalid_bounds_are_config_errors() {
        let mut spec = FleetSpec::default();
        spec.ees.capacity_kwh = Dist::Uniform([50.0, 40.0]);
        assert!(matches!(sample_fleet(&spec, 1, 10, 30.0), Err(Error::Config(_))));
    }

    #[test]
    fn short_run_logs_every_cycle() {
        let sc = Scenario::from_config(&small_config(Mode::EnergyOnly)).unwrap();
        let out = run(&sc).unwrap();
        assert_eq!(out.log.cycles.len(), 2 * 360);
        assert_eq!(out.log.hours.len(), 2);
        assert!(out.log.cycles.windows(2).all(|w| w[1].time_s == w[0].time_s + 10));
        assert!(lockout_violations(&out.log).is_empty());
        assert!(out.log.max_comfort_excess_c <= COMFORT_TOLERANCE_C);
        assert!(out.scores.is_empty());
        assert_eq!(out.costs.regulation(), 0.0);
    }

    #[test]
    fn lone_ees_with_flat_price_stays_idle() {
        let mut cfg = small_config(Mode::EnergyOnly);
        cfg.fleet.ev.count = 0;
        cfg.fleet.iva.count = 0;
        cfg.fleet.ffa.count = 0;
        cfg.fleet.ees.count = 1;
        cfg.run.hours = 3;
        let mut sc = Scenario::from_config(&cfg).unwrap();
        sc.prices.energy = vec![0.08; DAY_HOURS];
        let out = run(&sc).unwrap();
        for h in &out.log.hours {
            assert!(h.p_sch_kw.abs() < 1e-6, "{h:?}");
        }
        for c in &out.log.cycles {
            assert!(c.s_avg[0].unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn detector_flags_idle_ev() {
        let log = RunLog {
            departures: vec![Departure {
                device: 0,
                t_in_h: -4.0,
                t_dep_h: 7.0,
                e_final_kwh: 7.2,
                e_tar_kwh: 19.2,
                band_kwh: 0.6,
            }],
            ..Default::default()
        };
        let v = ev_final_energy_check(&log);
        assert!(!v[0].ok);
        assert!((v[0].deviation_kwh + 12.0).abs() < 1e-12);
    }

    #[test]
    fn exact_profile_passes() {
        let log = RunLog {
            departures: vec![Departure {
                device: 0,
                t_in_h: -4.0,
                t_dep_h: 7.0,
                e_final_kwh: 19.2,
                e_tar_kwh: 19.2,
                band_kwh: 0.6,
            }],
            ..Default::default()
        };
        let v = ev_final_energy_check(&log);
        assert!(v[0].ok && v[0].deviation_kwh == 0.0);
    }

    #[test]
    fn lockout_scan() {
        let sw = |t, event| Event {
            time_s: t,
            device: 5,
            kind: GesKind::Ffa,
            event,
            value: 300.0,
        };
        let mut log = RunLog::default();
        log.events = vec![sw(0, EventKind::SwitchOn), sw(300, EventKind::SwitchOff)];
        assert!(lockout_violations(&log).is_empty());
        log.events.push(sw(590, EventKind::SwitchOn));
        assert_eq!(lockout_violations(&log), vec![(5, 590)]);
    }
}
