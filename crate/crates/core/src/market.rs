//! Demand curves over the virtual price, their exact aggregation and the
//! clearing that turns a target power into the broadcast price `λ*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knots closer than this are merged into a jump.
const MIN_KNOT_GAP: f64 = 1e-9;
/// Broadcast price resolution.
pub const PRICE_QUANTUM: f64 = 1e-9;
/// Minimum width for a flat aggregate segment to trigger the midpoint rule.
const FLAT_MIN_WIDTH: f64 = 1e-6;

/// A breakpoint of a piecewise-linear curve. `at` is the value at `lambda`,
/// `after` the right limit; they differ at a downward jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub lambda: f64,
    pub at: f64,
    pub after: f64,
}

/// Non-increasing piecewise-linear function on `[-1, 1]`, continuous from the
/// left. Between knots the value runs linearly from `after` of the left knot
/// to `at` of the right one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piecewise {
    knots: Vec<Knot>,
}

impl Piecewise {
    /// Builds a curve from `(λ, power)` points, sorted by `λ`, spanning
    /// `[-1, 1]`. Points closer than 1e-9 in `λ` collapse into a jump.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a piecewise curve needs at least two points"));
        }
        let mut knots: Vec<Knot> = Vec::with_capacity(points.len());
        for &(lambda, p) in points {
            if !lambda.is_finite() || !p.is_finite() {
                return Err(Error::invalid("curve points must be finite"));
            }
            match knots.last_mut() {
                Some(last) if lambda < last.lambda => {
                    return Err(Error::invalid("curve points must be sorted by price"));
                }
                Some(last) if lambda - last.lambda < MIN_KNOT_GAP => last.after = p,
                _ => knots.push(Knot {
                    lambda,
                    at: p,
                    after: p,
                }),
            }
        }
        Self::from_knots(knots)
    }

    pub fn from_knots(mut knots: Vec<Knot>) -> Result<Self> {
        if knots.len() < 2 {
            // A single knot at -1 that absorbed the whole span.
            if let Some(k) = knots.first() {
                if k.lambda == -1.0 {
                    knots.push(Knot {
                        lambda: 1.0,
                        at: k.after,
                        after: k.after,
                    });
                }
            }
        }
        let first = knots.first().map(|k| k.lambda);
        let last = knots.last().map(|k| k.lambda);
        if first != Some(-1.0) || last.is_none_or(|l| (l - 1.0).abs() > MIN_KNOT_GAP) {
            return Err(Error::invalid("curve must span [-1, 1]"));
        }
        let n = knots.len();
        knots[n - 1].lambda = 1.0;
        knots[n - 1].after = knots[n - 1].at;
        for w in knots.windows(2) {
            if w[1].lambda <= w[0].lambda {
                return Err(Error::invalid("curve knots must be strictly increasing in price"));
            }
        }
        for (i, k) in knots.iter().enumerate() {
            let next_at = knots.get(i + 1).map_or(f64::NEG_INFINITY, |n| n.at);
            if k.after > k.at || next_at > k.after {
                return Err(Error::invalid(format!(
                    "demand curve must be non-increasing (knot at {})",
                    k.lambda
                )));
            }
        }
        Ok(Piecewise { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    fn eval(&self, lambda: f64) -> f64 {
        let k = &self.knots;
        let i = k.partition_point(|kn| kn.lambda < lambda);
        if i == 0 {
            return k[0].at;
        }
        if i >= k.len() {
            return k[k.len() - 1].at;
        }
        if k[i].lambda == lambda {
            return k[i].at;
        }
        let (l, r) = (k[i - 1], k[i]);
        l.after + (r.at - l.after) * (lambda - l.lambda) / (r.lambda - l.lambda)
    }

    /// `sup{λ : D(λ) ≥ y}` given `D(-1) ≥ y`.
    fn sup_ge(&self, y: f64) -> f64 {
        let k = &self.knots;
        let j = match k.iter().rposition(|kn| kn.at >= y) {
            Some(j) => j,
            None => return -1.0,
        };
        if j + 1 == k.len() {
            return 1.0;
        }
        let (l, r) = (k[j], k[j + 1]);
        if l.after < y {
            return l.lambda;
        }
        let frac = (l.after - y) / (l.after - r.at);
        (l.lambda + frac * (r.lambda - l.lambda)).min(r.lambda)
    }

    /// `inf{λ : D(λ) ≤ y}` given `D(1) ≤ y`.
    fn inf_le(&self, y: f64) -> f64 {
        let k = &self.knots;
        for j in 0..k.len() {
            if k[j].at <= y {
                if j == 0 {
                    return -1.0;
                }
                let (l, r) = (k[j - 1], k[j]);
                let frac = (l.after - y) / (l.after - r.at);
                return (l.lambda + frac * (r.lambda - l.lambda)).max(l.lambda);
            }
            if k[j].after <= y {
                return k[j].lambda;
            }
        }
        1.0
    }
}

/// A device bid: the power it is willing to consume at each virtual price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DemandCurve {
    /// Same power at every price (locked or holding devices).
    Flat(f64),
    /// `high` for `λ ≤ threshold`, `low` above it.
    Step { threshold: f64, high: f64, low: f64 },
    Piecewise(Piecewise),
}

fn check_price(lambda: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::contract(format!("price {lambda} outside [-1, 1]")))
    }
}

impl DemandCurve {
    pub fn evaluate(&self, lambda: f64) -> Result<f64> {
        check_price(lambda)?;
        Ok(self.eval_unchecked(lambda))
    }

    pub(crate) fn eval_unchecked(&self, lambda: f64) -> f64 {
        match self {
            DemandCurve::Flat(p) => *p,
            DemandCurve::Step {
                threshold,
                high,
                low,
            } => {
                if lambda <= *threshold {
                    *high
                } else {
                    *low
                }
            }
            DemandCurve::Piecewise(pw) => pw.eval(lambda),
        }
    }

    /// Whether the curve is non-increasing.
    pub fn is_monotone(&self) -> bool {
        match self {
            DemandCurve::Flat(p) => p.is_finite(),
            DemandCurve::Step { high, low, .. } => high >= low,
            DemandCurve::Piecewise(_) => true,
        }
    }
}

/// Neumaier-compensated running sum; slopes of steep segments are added and
/// later removed, so plain summation would leave residue.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    lambda: f64,
    jump: f64,
    slope_delta: f64,
}

/// Pointwise sum of individual demand curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    curve: Piecewise,
    d_min_price: f64,
    d_max_price: f64,
}

impl AggregateCurve {
    /// `D(-1)`: the most the fleet can consume right now.
    pub fn max_power(&self) -> f64 {
        self.d_min_price
    }

    /// `D(1)`: the least the fleet can consume right now.
    pub fn min_power(&self) -> f64 {
        self.d_max_price
    }

    pub fn evaluate(&self, lambda: f64) -> Result<f64> {
        check_price(lambda)?;
        Ok(self.curve.eval(lambda))
    }

    pub fn knots(&self) -> &[Knot] {
        self.curve.knots()
    }
}

/// Sums the curves exactly with a sweep over their breakpoints.
pub fn aggregate(curves: &[DemandCurve]) -> Result<AggregateCurve> {
    let mut base = CompensatedSum::default();
    let mut slope0 = CompensatedSum::default();
    let mut events: Vec<Event> = Vec::new();
    for c in curves {
        if !c.is_monotone() {
            return Err(Error::contract("demand curve is not non-increasing"));
        }
        match c {
            DemandCurve::Flat(p) => base.add(*p),
            DemandCurve::Step {
                threshold,
                high,
                low,
            } => {
                if *threshold >= 1.0 {
                    base.add(*high);
                } else if *threshold < -1.0 {
                    base.add(*low);
                } else {
                    base.add(*high);
                    events.push(Event {
                        lambda: *threshold,
                        jump: high - low,
                        slope_delta: 0.0,
                    });
                }
            }
            DemandCurve::Piecewise(pw) => {
                let k = pw.knots();
                base.add(k[0].at);
                let mut prev_slope = 0.0;
                for (i, kn) in k.iter().enumerate() {
                    let slope = match k.get(i + 1) {
                        Some(r) => (r.at - kn.after) / (r.lambda - kn.lambda),
                        None => 0.0,
                    };
                    if i == 0 {
                        slope0.add(slope);
                        if kn.at != kn.after {
                            events.push(Event {
                                lambda: kn.lambda,
                                jump: kn.at - kn.after,
                                slope_delta: 0.0,
                            });
                        }
                    } else if i + 1 < k.len() {
                        events.push(Event {
                            lambda: kn.lambda,
                            jump: kn.at - kn.after,
                            slope_delta: slope - prev_slope,
                        });
                    }
                    prev_slope = slope;
                }
            }
        }
    }
    events.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));

    let mut knots = Vec::with_capacity(events.len() + 2);
    let mut value = base.value();
    let mut slope = slope0;
    let mut cur = -1.0;
    let mut i = 0;
    if events.first().is_none_or(|e| e.lambda > -1.0) {
        knots.push(Knot {
            lambda: -1.0,
            at: value,
            after: value,
        });
    }
    while i < events.len() {
        let lambda = events[i].lambda;
        let at = value + slope.value() * (lambda - cur);
        let mut jump = CompensatedSum::default();
        while i < events.len() && events[i].lambda == lambda {
            jump.add(events[i].jump);
            slope.add(events[i].slope_delta);
            i += 1;
        }
        let after = at - jump.value();
        knots.push(Knot { lambda, at, after });
        value = after;
        cur = lambda;
    }
    if cur < 1.0 {
        let at = value + slope.value() * (1.0 - cur);
        knots.push(Knot {
            lambda: 1.0,
            at,
            after: at,
        });
    }
    // Guard against rounding producing tiny increases.
    for j in 0..knots.len() {
        if knots[j].after > knots[j].at {
            knots[j].after = knots[j].at;
        }
        if j + 1 < knots.len() && knots[j + 1].at > knots[j].after {
            knots[j + 1].at = knots[j].after;
        }
    }
    // Events at λ = 1 leave a jump on the last knot; only `at` matters there.
    let last = knots.len() - 1;
    knots[last].after = knots[last].at;
    let curve = Piecewise::from_knots(knots)?;
    let d_min_price = curve.knots[0].at;
    let d_max_price = curve.knots[curve.knots.len() - 1].at;
    Ok(AggregateCurve {
        curve,
        d_min_price,
        d_max_price,
    })
}

/// Outcome of one clearing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub lambda: f64,
    pub cleared_kw: f64,
    pub target_kw: f64,
    pub saturated: bool,
}

/// Finds the price at which the fleet consumes `target_kw`.
pub fn clear(agg: &AggregateCurve, target_kw: f64) -> Result<ClearingResult> {
    if target_kw.is_nan() {
        return Err(Error::contract("clearing target is NaN"));
    }
    let result = |lambda: f64, saturated: bool| ClearingResult {
        lambda,
        cleared_kw: agg.curve.eval(lambda),
        target_kw,
        saturated,
    };
    if target_kw > agg.max_power() {
        return Ok(result(-1.0, true));
    }
    if target_kw < agg.min_power() {
        return Ok(result(1.0, true));
    }

    let eps = 1e-9 * target_kw.abs().max(1.0);
    let hi = agg.curve.sup_ge(target_kw - eps);
    let lo = agg.curve.inf_le(target_kw + eps);
    if hi - lo > FLAT_MIN_WIDTH {
        let mid = quantize(0.5 * (lo + hi));
        if (agg.curve.eval(mid) - target_kw).abs() <= eps {
            return Ok(result(mid, false));
        }
    }

    let lambda_c = agg.curve.sup_ge(target_kw);
    let q = (lambda_c / PRICE_QUANTUM).floor() * PRICE_QUANTUM;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for cand in [q - PRICE_QUANTUM, q, q + PRICE_QUANTUM] {
        let lambda = cand.clamp(-1.0, 1.0);
        let power = agg.curve.eval(lambda);
        let err = (power - target_kw).abs();
        // Ties go to the higher-power (lower-price) side.
        if err < best.0 || (err == best.0 && power > best.2) {
            best = (err, lambda, power);
        }
    }
    Ok(result(best.1, false))
}

fn quantize(lambda: f64) -> f64 {
    ((lambda / PRICE_QUANTUM).round() * PRICE_QUANTUM).clamp(-1.0, 1.0)
}
