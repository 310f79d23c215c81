use ges_core::aggregate::{build_model, init_s_agg};
use ges_core::metrics::{change_rate, cost_report, mileage, performance_score, tracking_rms};
use ges_core::optimizer::{solve_mode, Mode};
use ges_core::sim::{Scenario, DAY_HOURS};
use proptest::prelude::*;

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 4..200)
}

proptest! {
    #[test]
    fn score_components_lie_in_unit_interval(target in signal(), noise in signal(), gain in -2.0..2.0f64, shift in 0usize..40) {
        let n = target.len();
        let response: Vec<f64> = (0..n)
            .map(|i| gain * target[i.saturating_sub(shift)] + 0.3 * noise[i % noise.len()])
            .collect();
        let s = performance_score(&target, &response, 10).unwrap();
        for v in [s.correlation, s.delay, s.precision, s.composite] {
            prop_assert!((0.0..=1.0).contains(&v), "{s:?}");
        }
        prop_assert!((s.composite - (s.correlation + s.delay + s.precision) / 3.0).abs() < 1e-12);
        prop_assert!(s.delay_s <= 300);
    }

    #[test]
    fn exact_tracking_scores_one(target in signal()) {
        prop_assume!(target.iter().any(|&x| (x - target[0]).abs() > 1e-3));
        let s = performance_score(&target, &target, 10).unwrap();
        prop_assert!((s.composite - 1.0).abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn mileage_ignores_a_constant_offset(v in prop::collection::vec(-1.0..1.0f64, 2..400), offset in -5.0..5.0f64, per_hour in 1usize..50) {
        let shifted: Vec<f64> = v.iter().map(|x| x + offset).collect();
        for h in 0..v.len() / per_hour {
            let (a, b) = (mileage(&v, per_hour, h), mileage(&shifted, per_hour, h));
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }
    }

    #[test]
    fn mileage_scales_with_amplitude(v in prop::collection::vec(-1.0..1.0f64, 2..400), k in 0.0..3.0f64) {
        let scaled: Vec<f64> = v.iter().map(|x| k * x).collect();
        let whole = v.len() - 1;
        let (a, b) = (mileage(&v, whole, 0), mileage(&scaled, whole, 0));
        prop_assert!((b - k * a).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn tracking_rms_is_zero_only_for_exact_tracking(target in signal(), err in -1.0..1.0f64) {
        let range = vec![2.0; target.len()];
        prop_assert_eq!(tracking_rms(&target, &target, &range), 0.0);
        let off: Vec<f64> = target.iter().map(|t| t + err).collect();
        prop_assert!((tracking_rms(&target, &off, &range) - err.abs() / 2.0).abs() < 1e-12);
    }
}

#[test]
fn mileage_counts_the_step_into_the_next_hour() {
    let v = [0.0, 1.0, 0.0, -1.0];
    // Hour 0 covers samples 0, 1 and the step to sample 2.
    assert_eq!(mileage(&v, 2, 0), 2.0);
    assert_eq!(mileage(&v, 2, 1), 1.0);
}

#[test]
fn change_rate_of_zero_reference_is_undefined() {
    assert_eq!(change_rate(1.0, 0.0), None);
    assert!((change_rate(80.0, 100.0).unwrap() + 0.2).abs() < 1e-15);
}

/// The ex-ante report of a full-day schedule reproduces the objective terms
/// the optimizer minimized.
#[test]
fn ex_ante_report_matches_schedule_terms() {
    for mode in [Mode::EnergyOnly, Mode::DualMarket] {
        let sc = Scenario::sample(mode).unwrap();
        let s_hat = init_s_agg(&sc.devices, 0.0).unwrap().clamp(-1.0, 1.0);
        let model = build_model(&sc.devices, 0, DAY_HOURS, &sc.outdoor_forecast, s_hat, sc.ev_membership).unwrap();
        let sched = solve_mode(&model, &sc.prices, mode).unwrap();
        let committed: Vec<_> = (0..DAY_HOURS).map(|j| (j, sched.power[j], sched.capacity[j])).collect();
        let r = cost_report(&committed, &sc.prices, None);
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        assert!(rel(r.bill, sched.terms.bill), "{mode}: {} vs {}", r.bill, sched.terms.bill);
        assert!(rel(r.capacity_payment, sched.terms.capacity_payment));
        assert!(rel(r.mileage_payment, sched.terms.mileage_payment));
        assert!(rel(r.total() + sched.terms.penalty, sched.objective));
        assert_eq!(r.capacity_payment_ex_post, 0.0);
    }
}
