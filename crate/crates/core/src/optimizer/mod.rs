//! Hourly rolling optimization: dual-market allocation, energy-only
//! scheduling and baseline estimation over a shrinking horizon.

pub mod qp;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateModel;
use crate::error::{Error, Result};
pub use qp::{KktResiduals, QpProblem, QpSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    EnergyOnly,
    DualMarket,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::EnergyOnly => "energy_only",
            Mode::DualMarket => "dual_market",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "energy_only" => Ok(Mode::EnergyOnly),
            "dual_market" => Ok(Mode::DualMarket),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected baseline, energy_only or dual_market)"
            ))),
        }
    }
}

/// Hourly prices and settlement constants. Energy in $/kWh; capacity and
/// mileage in $ per kW of regulation capacity per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPrices {
    pub energy: Vec<f64>,
    pub capacity: Vec<f64>,
    pub mileage: Vec<f64>,
    pub score: f64,
    pub mileage_ratio: f64,
    /// Weight of the DoS penalty.
    pub penalty_scale: f64,
}

impl MarketPrices {
    pub fn validate(&self, hours: usize) -> Result<()> {
        for (name, v) in [
            ("energy", &self.energy),
            ("capacity", &self.capacity),
            ("mileage", &self.mileage),
        ] {
            if v.len() < hours {
                return Err(Error::invalid(format!(
                    "{name} prices cover {} hours, need {hours}",
                    v.len()
                )));
            }
            if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::invalid(format!("{name} prices must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid("performance score must lie in [0, 1]"));
        }
        if !(self.mileage_ratio >= 0.0 && self.penalty_scale >= 0.0) {
            return Err(Error::invalid("mileage ratio and penalty scale must be non-negative"));
        }
        Ok(())
    }

    /// Mean of the daily energy price curve.
    pub fn mean_energy(&self) -> f64 {
        if self.energy.is_empty() {
            0.0
        } else {
            self.energy.iter().sum::<f64>() / self.energy.len() as f64
        }
    }

    /// Expected regulation payment per kW of capacity in `hour`.
    pub fn regulation_value(&self, hour: usize) -> f64 {
        self.score * (self.capacity[hour] + self.mileage[hour] * self.mileage_ratio)
    }

    /// Quadratic penalty weight for `hour` given its power range.
    pub fn penalty_weight(&self, range_kw: f64) -> f64 {
        self.penalty_scale * self.mean_energy() * range_kw
    }
}

/// DoS penalty `ω_scale μ_avg S² (P_max − P_min)` in $.
pub fn penalty(s: f64, range_kw: f64, prices: &MarketPrices) -> f64 {
    prices.penalty_weight(range_kw) * s * s
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub bill: f64,
    pub capacity_payment: f64,
    pub mileage_payment: f64,
    pub penalty: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.bill - self.capacity_payment - self.mileage_payment + self.penalty
    }
}

/// Multipliers of the hourly power-limit rows in $/kW.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HourDuals {
    pub upper: f64,
    pub lower: f64,
}

/// The solved instance, kept for offline verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub problem: QpProblem,
    pub solution: QpSolution,
    /// Hour and kind of each constraint row.
    pub rows: Vec<RowLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowLabel {
    pub hour: usize,
    pub kind: RowKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    DosUpper,
    DosLower,
    PowerUpper,
    PowerLower,
    CapacityNonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: Mode,
    pub start_hour: usize,
    pub s_init: f64,
    /// `P_sch` (or `P_base`) per hour, kW.
    pub power: Vec<f64>,
    /// `C_reg` per hour, kW (zero outside the dual market).
    pub capacity: Vec<f64>,
    /// `S_agg` at the end of each hour.
    pub s_agg: Vec<f64>,
    pub terms: ObjectiveTerms,
    pub objective: f64,
    pub duals: Vec<HourDuals>,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub diagnostic: Diagnostic,
}

impl Schedule {
    pub fn horizon(&self) -> usize {
        self.power.len()
    }

    /// Writes the solved instance as JSON.
    pub fn write_diagnostic(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.diagnostic)?;
        Ok(())
    }
}

/// Evaluates the objective terms of a trajectory.
pub fn objective_terms(
    model: &AggregateModel,
    prices: Option<&MarketPrices>,
    power: &[f64],
    capacity: &[f64],
    s_agg: &[f64],
) -> ObjectiveTerms {
    let Some(prices) = prices else {
        return ObjectiveTerms {
            penalty: s_agg.iter().map(|s| s * s).sum(),
            ..Default::default()
        };
    };
    let mut t = ObjectiveTerms::default();
    for (j, hm) in model.hours.iter().enumerate() {
        let k = hm.hour;
        t.bill += prices.energy[k] * power[j];
        t.capacity_payment += prices.score * prices.capacity[k] * capacity[j];
        t.mileage_payment += prices.score * prices.mileage[k] * prices.mileage_ratio * capacity[j];
        t.penalty += penalty(s_agg[j], hm.p_max - hm.p_min, prices);
    }
    t
}

struct Builder {
    n: usize,
    q: DMatrix<f64>,
    c: DVector<f64>,
    rows: Vec<(Vec<f64>, f64, RowLabel)>,
}

impl Builder {
    fn row(&mut self, coeffs: Vec<f64>, rhs: f64, label: RowLabel) {
        self.rows.push((coeffs, rhs, label));
    }
}

fn solve(model: &AggregateModel, prices: Option<&MarketPrices>, mode: Mode) -> Result<Schedule> {
    let h = model.horizon();
    if h == 0 {
        return Err(Error::invalid("empty optimization horizon"));
    }
    if let Some(p) = prices {
        p.validate(model.start_hour + h)?;
    }
    for hm in &model.hours {
        if hm.p_min > hm.p_max {
            return Err(Error::Infeasible {
                hour: Some(hm.hour),
                reason: format!("fleet power limits cross ({} > {} kW)", hm.p_min, hm.p_max),
            });
        }
        if !(hm.m1 < 0.0) && hm.members > 0 {
            return Err(Error::contract(format!("aggregate M1 must be negative at hour {}", hm.hour)));
        }
    }
    if model.hours.iter().any(|hm| hm.members == 0) {
        return Err(Error::Infeasible {
            hour: model.hours.iter().find(|hm| hm.members == 0).map(|hm| hm.hour),
            reason: "no devices in the aggregate model".into(),
        });
    }
    let dual = mode == Mode::DualMarket;
    // Scale powers to O(1) so residual tolerances are meaningful.
    let ps = model
        .hours
        .iter()
        .flat_map(|hm| [hm.p_min.abs(), hm.p_max.abs(), hm.m1.abs(), hm.m2.abs(), hm.m3.abs()])
        .fold(1.0f64, f64::max);
    // Hours with no regulation payoff carry no capacity variable: the
    // objective is indifferent there and C_reg = 0 is the deterministic pick.
    let mut cap_col = vec![None; h];
    let mut n = h;
    if dual {
        let pr = prices.ok_or_else(|| Error::contract("dual market needs prices"))?;
        for (j, hm) in model.hours.iter().enumerate() {
            if pr.regulation_value(hm.hour) > 0.0 {
                cap_col[j] = Some(n);
                n += 1;
            }
        }
    }
    let mut b = Builder {
        n,
        q: DMatrix::zeros(n, n),
        c: DVector::zeros(n),
        rows: Vec::new(),
    };
    let s0 = model.s_init;

    for (j, hm) in model.hours.iter().enumerate() {
        let k = hm.hour;
        match prices.filter(|_| mode != Mode::Baseline) {
            Some(pr) => {
                b.c[j] += pr.energy[k] * hm.m1;
                if j > 0 {
                    b.c[j - 1] += pr.energy[k] * hm.m2;
                }
                b.q[(j, j)] += 2.0 * pr.penalty_weight(hm.p_max - hm.p_min);
                if let Some(col) = cap_col[j] {
                    b.c[col] -= pr.regulation_value(k) * ps;
                }
            }
            None => b.q[(j, j)] += 2.0,
        }

        let lab = |kind| RowLabel { hour: k, kind };
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        b.row(e.clone(), 1.0, lab(RowKind::DosUpper));
        e[j] = -1.0;
        b.row(e, 1.0, lab(RowKind::DosLower));

        // P_k / ps as a function of x, plus its constant part.
        let mut p_row = vec![0.0; n];
        p_row[j] = hm.m1 / ps;
        let mut p_const = hm.m3 / ps;
        if j > 0 {
            p_row[j - 1] = hm.m2 / ps;
        } else {
            p_const += hm.m2 * s0 / ps;
        }
        let mut up = p_row.clone();
        let mut lo: Vec<f64> = p_row.iter().map(|v| -v).collect();
        if let Some(col) = cap_col[j] {
            up[col] = 1.0;
            lo[col] = 1.0;
            let mut cn = vec![0.0; n];
            cn[col] = -1.0;
            b.row(cn, 0.0, lab(RowKind::CapacityNonNegative));
        }
        b.row(up, hm.p_max / ps - p_const, lab(RowKind::PowerUpper));
        b.row(lo, p_const - hm.p_min / ps, lab(RowKind::PowerLower));
    }

    let obj_scale = b
        .c
        .iter()
        .chain(b.q.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-12);
    let m = b.rows.len();
    let mut g = DMatrix::zeros(m, b.n);
    let mut hv = DVector::zeros(m);
    let mut labels = Vec::with_capacity(m);
    for (i, (coeffs, rhs, label)) in b.rows.into_iter().enumerate() {
        for (col, v) in coeffs.into_iter().enumerate() {
            g[(i, col)] = v;
        }
        hv[i] = rhs;
        labels.push(label);
    }
    let problem = QpProblem {
        q: b.q / obj_scale,
        c: b.c / obj_scale,
        g,
        h: hv,
    };

    let report = qp::feasibility(&problem)?;
    if qp::is_infeasible(&report) {
        let label = report.worst_row.map(|r| labels[r]);
        return Err(Error::Infeasible {
            hour: label.map(|l| l.hour),
            reason: format!(
                "constraints need a relaxation of {:.3e}{}",
                report.violation,
                label.map(|l| format!(" (tightest row: {:?})", l.kind)).unwrap_or_default()
            ),
        });
    }
    let sol = qp::solve_ipm(&problem)?;

    let s_agg: Vec<f64> = (0..h).map(|j| sol.x[j]).collect();
    let capacity: Vec<f64> = cap_col
        .iter()
        .map(|col| col.map_or(0.0, |c| (sol.x[c] * ps).max(0.0)))
        .collect();
    let power: Vec<f64> = model
        .hours
        .iter()
        .enumerate()
        .map(|(j, hm)| hm.power(s_agg[j], if j == 0 { s0 } else { s_agg[j - 1] }))
        .collect();
    let mut duals = vec![HourDuals::default(); h];
    for (i, label) in labels.iter().enumerate() {
        let j = label.hour - model.start_hour;
        let z = sol.z[i] * obj_scale / ps;
        match label.kind {
            RowKind::PowerUpper => duals[j].upper = z,
            RowKind::PowerLower => duals[j].lower = z,
            _ => {}
        }
    }
    let pr = prices.filter(|_| mode != Mode::Baseline);
    let terms = objective_terms(model, pr, &power, &capacity, &s_agg);
    Ok(Schedule {
        mode,
        start_hour: model.start_hour,
        s_init: s0,
        power,
        capacity,
        s_agg,
        objective: terms.total(),
        terms,
        duals,
        kkt: sol.kkt,
        iterations: sol.iterations,
        diagnostic: Diagnostic {
            problem,
            solution: sol,
            rows: labels,
        },
    })
}

/// Joint energy and regulation-capacity schedule.
pub fn solve_dual_market(model: &AggregateModel, prices: &MarketPrices) -> Result<Schedule> {
    solve(model, Some(prices), Mode::DualMarket)
}

/// Energy-market-only schedule.
pub fn solve_energy_only(model: &AggregateModel, prices: &MarketPrices) -> Result<Schedule> {
    solve(model, Some(prices), Mode::EnergyOnly)
}

/// Baseline consumption: the trajectory keeping `S_agg` closest to zero.
pub fn solve_baseline(model: &AggregateModel) -> Result<Schedule> {
    solve(model, None, Mode::Baseline)
}

/// Dispatches on `mode`.
pub fn solve_mode(model: &AggregateModel, prices: &MarketPrices, mode: Mode) -> Result<Schedule> {
    match mode {
        Mode::Baseline => solve_baseline(model),
        Mode::EnergyOnly => solve_energy_only(model, prices),
        Mode::DualMarket => solve_dual_market(model, prices),
    }
}
