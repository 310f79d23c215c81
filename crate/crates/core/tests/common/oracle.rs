//! Brute-force reference for the scheduling problem on small horizons.

use ges_core::aggregate::{AggregateModel, HourModel};
use ges_core::optimizer::{MarketPrices, Mode};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn prices_flat(energy: f64, capacity: f64, mileage: f64) -> MarketPrices {
    MarketPrices {
        energy: vec![energy; 24],
        capacity: vec![capacity; 24],
        mileage: vec![mileage; 24],
        score: 0.92,
        mileage_ratio: 2.7,
        penalty_scale: 0.1,
    }
}

pub fn toy(hours: &[(f64, f64, f64, f64, f64)], s_init: f64) -> AggregateModel {
    let start = 24 - hours.len();
    AggregateModel {
        start_hour: start,
        hours: hours
            .iter()
            .enumerate()
            .map(|(j, &(m1, m2, m3, p_min, p_max))| HourModel {
                hour: start + j,
                m1,
                m2,
                m3,
                p_min,
                p_max,
                members: 100,
            })
            .collect(),
        s_init,
    }
}

/// Objective of an end-of-hour DoS trajectory with the capacity chosen
/// optimally, or `None` when the trajectory breaks a limit.
pub fn cost(model: &AggregateModel, prices: Option<&MarketPrices>, mode: Mode, s: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    let mut prev = model.s_init;
    for (j, hm) in model.hours.iter().enumerate() {
        if s[j].abs() > 1.0 {
            return None;
        }
        let p = hm.m1 * s[j] + hm.m2 * prev + hm.m3;
        if p < hm.p_min - 1e-9 || p > hm.p_max + 1e-9 {
            return None;
        }
        match (prices, mode) {
            (None, _) | (_, Mode::Baseline) => total += s[j] * s[j],
            (Some(pr), _) => {
                let k = hm.hour;
                let mean = pr.energy.iter().sum::<f64>() / pr.energy.len() as f64;
                total += pr.energy[k] * p + pr.penalty_scale * mean * (hm.p_max - hm.p_min) * s[j] * s[j];
                let value = pr.score * (pr.capacity[k] + pr.mileage[k] * pr.mileage_ratio);
                if mode == Mode::DualMarket && value > 0.0 {
                    let c = (hm.p_max - p).min(p - hm.p_min).max(0.0);
                    total -= value * c;
                }
            }
        }
        prev = s[j];
    }
    Some(total)
}

/// Maps `u ∈ [0, 1]^H` to a DoS trajectory, each hour placing its power at
/// fraction `u_j` of the interval left open by the power limits and
/// `|S| ≤ 1` given the previous DoS. Every limit becomes a face of the cube.
pub fn trajectory(model: &AggregateModel, u: &[f64]) -> Option<Vec<f64>> {
    let mut prev = model.s_init;
    let mut s = Vec::with_capacity(u.len());
    for (hm, &u) in model.hours.iter().zip(u) {
        let free = hm.m2 * prev + hm.m3;
        let lo = hm.p_min.max(hm.m1 + free);
        let hi = hm.p_max.min(-hm.m1 + free);
        if lo > hi || !(0.0..=1.0).contains(&u) {
            return None;
        }
        let p = lo + u * (hi - lo);
        let next = ((p - free) / hm.m1).clamp(-1.0, 1.0);
        s.push(next);
        prev = next;
    }
    Some(s)
}

/// Exhaustive search on a 1e-2 grid of the unit cube, then repeated local
/// grids shrinking by ten down to 1e-9.
pub fn grid_oracle(model: &AggregateModel, prices: Option<&MarketPrices>, mode: Mode) -> Option<(f64, Vec<f64>)> {
    let h = model.horizon();
    let eval = |u: &[f64]| trajectory(model, u).and_then(|s| cost(model, prices, mode, &s).map(|f| (f, s)));
    let scan = |centre: &[f64], half: i64, step: f64, best: &mut Option<(f64, Vec<f64>, Vec<f64>)>| {
        let width = (2 * half + 1) as usize;
        let mut idx = vec![0usize; h];
        loop {
            let u: Vec<f64> = (0..h)
                .map(|j| (centre[j] + (idx[j] as i64 - half) as f64 * step).clamp(0.0, 1.0))
                .collect();
            if let Some((f, s)) = eval(&u) {
                if best.as_ref().is_none_or(|(b, _, _)| f < *b) {
                    *best = Some((f, u, s));
                }
            }
            let mut j = 0;
            while j < h {
                idx[j] += 1;
                if idx[j] < width {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == h {
                break;
            }
        }
    };
    let mut best = None;
    scan(&vec![0.5; h], 50, 0.01, &mut best);
    let mut step = 0.01;
    while step > 1e-9 {
        let centre = best.as_ref()?.1.clone();
        step /= 10.0;
        scan(&centre, 20, step, &mut best);
    }
    best.map(|(f, _, s)| (f, s))
}

pub fn random_instance(rng: &mut ChaCha8Rng, h: usize) -> (AggregateModel, MarketPrices) {
    let hours: Vec<_> = (0..h)
        .map(|_| {
            let m1 = -rng.random_range(100.0..600.0);
            let m2 = -m1 * rng.random_range(0.3..0.9);
            let p_min = -rng.random_range(0.0..400.0);
            let p_max = rng.random_range(200.0..1600.0);
            let m3 = rng.random_range(0.0..0.5) * p_max;
            (m1, m2, m3, p_min, p_max)
        })
        .collect();
    let model = toy(&hours, rng.random_range(-0.8..0.8));
    let mut prices = prices_flat(0.0, 0.0, 0.0);
    for k in 0..24 {
        prices.energy[k] = rng.random_range(0.03..0.12);
        prices.capacity[k] = if rng.random_bool(0.8) { rng.random_range(0.0..0.05) } else { 0.0 };
        prices.mileage[k] = rng.random_range(0.0..0.006);
    }
    (model, prices)
}
