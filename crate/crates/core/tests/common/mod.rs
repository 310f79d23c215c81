#![allow(dead_code)]

pub mod clearing;
pub mod oracle;

use ges_core::devices::{
    DeviceState, EesParams, Env, EvParams, FfaParams, GesParams, IvaParams, TclParams,
};
use proptest::prelude::*;

pub fn thermal() -> impl Strategy<Value = TclParams> {
    (1.0..1.5f64, 0.8..1.2f64, 23.0..28.0f64, 2.0..3.0f64).prop_map(|(r_th, c_th, t_set, t_dev)| TclParams {
        r_th,
        c_th,
        t_set,
        t_dev,
    })
}

pub fn ees() -> impl Strategy<Value = GesParams> {
    (40.0..50.0f64, 40.0..50.0f64, 0.8..=1.0f64, 0.8..=1.0f64).prop_map(|(cap, p, ec, ed)| {
        GesParams::Ees(EesParams {
            capacity_kwh: cap,
            p_nom_kw: p,
            eta_charge: ec,
            eta_discharge: ed,
            e_min_kwh: 0.0,
            e_max_kwh: cap,
            t_res_s: 10,
        })
    })
}

/// Session over `[0, duration)` hours.
pub fn ev() -> impl Strategy<Value = GesParams> {
    (20.0..30.0f64, 6.0..8.0f64, 8.0..14.0f64, 0.25..0.35f64, 0.75..0.85f64).prop_map(
        |(cap, p, duration, soc_in, soc_tar)| {
            GesParams::Ev(EvParams {
                capacity_kwh: cap,
                p_nom_kw: p,
                eta: 0.9,
                t_in_h: 0.0,
                t_dep_h: duration,
                e_in_kwh: soc_in * cap,
                e_tar_kwh: soc_tar * cap,
                deadband_pct: 2.5,
                t_lock_s: 300,
            })
        },
    )
}

pub fn iva() -> impl Strategy<Value = GesParams> {
    (thermal(), 0.4..0.5f64, 5.0..6.0f64).prop_map(|(thermal, lo, hi)| {
        GesParams::Iva(IvaParams {
            thermal,
            p_min_kw: lo,
            p_max_kw: hi,
            p1: 0.03,
            p2: -0.4,
            q1: 0.06,
            q2: -0.3,
            t_res_s: 60,
        })
    })
}

pub fn ffa() -> impl Strategy<Value = GesParams> {
    (thermal(), 4.5..5.5f64, 3.0..4.0f64).prop_map(|(thermal, p, cop)| {
        GesParams::Ffa(FfaParams {
            thermal,
            p_nom_kw: p,
            cop,
            t_lock_s: 300,
        })
    })
}

pub fn any_params() -> impl Strategy<Value = GesParams> {
    prop_oneof![ees(), ev(), iva(), ffa()]
}

/// A state whose DoS is `s` at `time_h`, with the given ON flag and lock.
pub fn state_at(params: &GesParams, s: f64, time_h: f64, on: bool, lock_s: u32) -> DeviceState {
    let mut st = match params {
        GesParams::Ees(p) => DeviceState::with_energy(p.capacity_kwh * (1.0 - s) / 2.0),
        GesParams::Ev(p) => {
            let e_exp = ges_core::devices::ev_expected_energy(p, time_h).unwrap();
            DeviceState::with_energy(e_exp - s * p.deadband_kwh())
        }
        GesParams::Iva(p) => DeviceState::with_temperature(p.thermal.t_set + s * p.thermal.t_dev),
        GesParams::Ffa(p) => DeviceState::with_temperature(p.thermal.t_set + s * p.thermal.t_dev),
    };
    if let Some(p_on) = params.on_power() {
        st.on = on;
        st.power_kw = if on { p_on } else { 0.0 };
        st.lock_remaining_s = lock_s;
    }
    st
}

/// Device, a state with DoS in `[-1.2, 1.2]`, outdoor temperature and time.
pub fn situation() -> impl Strategy<Value = (GesParams, DeviceState, Env, f64)> {
    (any_params(), -1.2..1.2f64, 28.0..38.0f64, 0.5..7.5f64, any::<bool>(), prop_oneof![Just(0u32), 10..300u32])
        .prop_map(|(p, s, t_o, time_h, on, lock)| {
            let st = state_at(&p, s, time_h, on, lock);
            (p, st, Env::new(t_o), time_h)
        })
}
