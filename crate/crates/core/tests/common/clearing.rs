use ges_core::market::{AggregateCurve, DemandCurve, Piecewise, PRICE_QUANTUM};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A random non-increasing curve of one of the three shapes.
pub fn random_curve(rng: &mut ChaCha8Rng) -> DemandCurve {
    match rng.random_range(0..3) {
        0 => DemandCurve::Flat(rng.random_range(-10.0..10.0)),
        1 => {
            let high = rng.random_range(1.0..8.0);
            DemandCurve::Step {
                threshold: rng.random_range(-1.0..1.0),
                high,
                low: 0.0,
            }
        }
        _ => {
            // Anchor plus saturation ends, clipped the way devices clip.
            let s: f64 = rng.random_range(-1.0..1.0);
            let p_const = rng.random_range(-5.0..5.0);
            let p_max = p_const + rng.random_range(0.0..20.0);
            let p_min = p_const - rng.random_range(0.0..20.0);
            let mut pts = vec![(-1.0, p_max), (s, p_const), (1.0, p_min)];
            if rng.random_bool(0.3) {
                // A sharp corner close to the anchor.
                let eps = rng.random_range(1e-7..1e-3);
                if s + eps < 1.0 {
                    pts.insert(2, (s + eps, p_const - rng.random_range(0.0..1.0) * (p_const - p_min)));
                }
            }
            if s <= -1.0 + 1e-6 || s >= 1.0 - 1e-6 {
                pts.remove(1);
            }
            DemandCurve::Piecewise(Piecewise::from_points(&pts).unwrap())
        }
    }
}

/// Bisection on the price to 1e-10, returning the best of the bracket.
pub fn oracle(agg: &AggregateCurve, target: f64) -> f64 {
    let d = |l: f64| agg.evaluate(l).unwrap();
    if target >= d(-1.0) {
        return -1.0;
    }
    if target <= d(1.0) {
        return 1.0;
    }
    // Keeps d(lo) > target >= d(hi).
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if d(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (d(lo) - target).abs() <= (d(hi) - target).abs() {
        lo
    } else {
        hi
    }
}

/// Smallest miss the oracle achieves with a broadcastable price: its own
/// bracket, or the 1e-9 grid points around it, whichever is worse.
pub fn oracle_miss(agg: &AggregateCurve, target: f64) -> f64 {
    let l_o = oracle(agg, target);
    let miss = |l: f64| (agg.evaluate(l.clamp(-1.0, 1.0)).unwrap() - target).abs();
    let q = (l_o / PRICE_QUANTUM).floor() * PRICE_QUANTUM;
    miss(l_o).max(miss(q).min(miss(q + PRICE_QUANTUM)))
}
