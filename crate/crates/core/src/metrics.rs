//! Tracking statistics, regulation performance scoring, mileage, DoS
//! dispersion and cost accounting.

use serde::{Deserialize, Serialize};

use crate::devices::GesKind;
use crate::error::{Error, Result};
use crate::optimizer::MarketPrices;

/// Longest response delay scanned by the correlation score.
pub const MAX_DELAY_S: u32 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfScore {
    pub correlation: f64,
    pub delay: f64,
    pub precision: f64,
    pub composite: f64,
    /// Delay at which the correlation peaked, seconds.
    pub delay_s: u32,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // Variance at rounding level counts as none.
    let floor = |v: &[f64]| 1e-20 * v.iter().map(|x| x * x).sum::<f64>();
    if saa <= floor(a) || sbb <= floor(b) {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Three-component performance score of `response` tracking `target` over
/// one hour sampled every `period_s` seconds.
pub fn performance_score(target: &[f64], response: &[f64], period_s: u32) -> Result<PerfScore> {
    if target.len() != response.len() || target.len() < 2 {
        return Err(Error::invalid(
            "score needs equally long target and response with at least two samples",
        ));
    }
    if period_s == 0 {
        return Err(Error::invalid("sample period must be positive"));
    }
    let n = target.len();
    let t_mean = mean(target);
    let spread = target.iter().map(|t| (t - t_mean).abs()).sum::<f64>() / n as f64;
    let error = target.iter().zip(response).map(|(t, r)| (r - t).abs()).sum::<f64>() / n as f64;
    let scale = target.iter().chain(response).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let constant = spread <= 1e-12 * scale;

    let (correlation, best_shift) = if constant {
        (if error <= 1e-12 * scale { 1.0 } else { 0.0 }, 0)
    } else {
        let max_shift = ((MAX_DELAY_S / period_s) as usize).min(n - 2);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for d in 0..=max_shift {
            let c = pearson(&target[..n - d], &response[d..]).unwrap_or(0.0);
            if c > best.0 + 1e-12 {
                best = (c, d);
            }
        }
        (best.0.clamp(0.0, 1.0), best.1)
    };
    let delay_s = best_shift as u32 * period_s;
    let delay = 1.0 - delay_s as f64 / MAX_DELAY_S as f64;
    let precision = if constant {
        if error <= 1e-12 * scale {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - error / spread).max(0.0)
    };
    Ok(PerfScore {
        correlation,
        delay,
        precision,
        composite: (correlation + delay + precision) / 3.0,
        delay_s,
    })
}

/// Total variation of `values` over hour `hour` (with `per_hour` samples per
/// hour), including the step into the following hour.
pub fn mileage(values: &[f64], per_hour: usize, hour: usize) -> f64 {
    crate::signals::hour_mileage(values, per_hour, hour)
}

/// RMS of `(P_agg − P_tar) / range`.
pub fn tracking_rms(target: &[f64], actual: &[f64], range: &[f64]) -> f64 {
    let n = target.len().min(actual.len()).min(range.len());
    if n == 0 {
        return 0.0;
    }
    let ss: f64 = (0..n)
        .map(|i| {
            let e = (actual[i] - target[i]) / range[i].max(1e-12);
            e * e
        })
        .sum();
    (ss / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HourCost {
    pub hour: usize,
    pub power_kw: f64,
    pub capacity_kw: f64,
    pub bill: f64,
    pub capacity_payment: f64,
    pub mileage_payment: f64,
    pub capacity_payment_ex_post: f64,
    pub mileage_payment_ex_post: f64,
}

impl HourCost {
    pub fn regulation(&self) -> f64 {
        self.capacity_payment + self.mileage_payment
    }

    pub fn total(&self) -> f64 {
        self.bill - self.regulation()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub hours: Vec<HourCost>,
    pub bill: f64,
    pub capacity_payment: f64,
    pub mileage_payment: f64,
    pub capacity_payment_ex_post: f64,
    pub mileage_payment_ex_post: f64,
}

impl CostReport {
    pub fn regulation(&self) -> f64 {
        self.capacity_payment + self.mileage_payment
    }

    pub fn total(&self) -> f64 {
        self.bill - self.regulation()
    }

    pub fn total_ex_post(&self) -> f64 {
        self.bill - self.capacity_payment_ex_post - self.mileage_payment_ex_post
    }
}

/// Realized regulation performance of one hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Realized {
    pub score: f64,
    pub mileage: f64,
}

/// Settles the committed hourly `(hour, P_sch, C_reg)` at the given prices.
/// Ex-ante payments use the assumed score and mileage ratio; ex-post ones
/// the realized values when supplied.
pub fn cost_report(
    committed: &[(usize, f64, f64)],
    prices: &MarketPrices,
    realized: Option<&[Option<Realized>]>,
) -> CostReport {
    let mut report = CostReport::default();
    for (i, &(hour, p, c)) in committed.iter().enumerate() {
        let ex_post = realized.and_then(|r| r.get(i).copied().flatten());
        let (score, mile) = ex_post.map_or((0.0, 0.0), |r| (r.score, r.mileage));
        let row = HourCost {
            hour,
            power_kw: p,
            capacity_kw: c,
            bill: prices.energy[hour] * p,
            capacity_payment: prices.score * prices.capacity[hour] * c,
            mileage_payment: prices.score * prices.mileage[hour] * prices.mileage_ratio * c,
            capacity_payment_ex_post: score * prices.capacity[hour] * c,
            mileage_payment_ex_post: score * prices.mileage[hour] * mile * c,
        };
        report.bill += row.bill;
        report.capacity_payment += row.capacity_payment;
        report.mileage_payment += row.mileage_payment;
        report.capacity_payment_ex_post += row.capacity_payment_ex_post;
        report.mileage_payment_ex_post += row.mileage_payment_ex_post;
        report.hours.push(row);
    }
    report
}

/// `(case − reference) / reference`, `None` when the reference is zero.
pub fn change_rate(case: f64, reference: f64) -> Option<f64> {
    if reference == 0.0 {
        None
    } else {
        Some((case - reference) / reference)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DosDispersion {
    /// Largest `|S_i − λ*|` over CP-GES.
    pub max_cp_deviation: f64,
    pub mean_cp_deviation: f64,
    /// Mean DoS per kind, indexed by `GesKind::index`.
    pub kind_mean: [Option<f64>; 4],
}

impl DosDispersion {
    pub fn kind_deviation(&self, kind: GesKind, lambda: f64) -> Option<f64> {
        self.kind_mean[kind.index()].map(|m| (m - lambda).abs())
    }
}

pub fn dos_dispersion(snapshot: &[(GesKind, f64)], lambda: f64) -> DosDispersion {
    let mut out = DosDispersion::default();
    let mut sums = [(0.0, 0usize); 4];
    let mut cp = (0.0, 0usize);
    for &(kind, s) in snapshot {
        let e = &mut sums[kind.index()];
        e.0 += s;
        e.1 += 1;
        if kind.is_continuous() {
            let d = (s - lambda).abs();
            out.max_cp_deviation = out.max_cp_deviation.max(d);
            cp.0 += d;
            cp.1 += 1;
        }
    }
    if cp.1 > 0 {
        out.mean_cp_deviation = cp.0 / cp.1 as f64;
    }
    for (i, (sum, n)) in sums.iter().enumerate() {
        if *n > 0 {
            out.kind_mean[i] = Some(sum / *n as f64);
        }
    }
    out
}
