use ges_core::signals::{hourly_means, read_csv, reference_start, resample, synth_regd, Interp, TimeSeries};
use proptest::prelude::*;

fn series(period_s: u32, values: Vec<f64>) -> TimeSeries {
    TimeSeries::new(reference_start(), period_s, values, "kW").unwrap()
}

proptest! {
    #[test]
    fn upsample_then_decimate_is_identity(
        values in prop::collection::vec(-100.0..100.0f64, 1..100),
        period in prop_oneof![Just(60u32), Just(300), Just(3600)],
        factor in prop_oneof![Just(2u32), Just(5), Just(6), Just(10)],
        linear in any::<bool>(),
    ) {
        let s = series(period, values);
        let interp = if linear { Interp::Linear } else { Interp::Hold };
        let fine = resample(&s, period / factor, interp).unwrap();
        prop_assert_eq!(fine.len(), s.len() * factor as usize);
        let back = resample(&fine, period, interp).unwrap();
        prop_assert_eq!(&back, &s);
        // Resampling to the same period changes nothing.
        prop_assert_eq!(&resample(&back, period, interp).unwrap(), &s);
    }

    #[test]
    fn linear_upsampling_stays_between_neighbours(values in prop::collection::vec(-100.0..100.0f64, 2..50)) {
        let fine = resample(&series(600, values.clone()), 60, Interp::Linear).unwrap();
        for (i, w) in values.windows(2).enumerate() {
            let (lo, hi) = (w[0].min(w[1]), w[0].max(w[1]));
            for v in &fine.values[i * 10..(i + 1) * 10] {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_regd_is_centred_and_bounded(seed in any::<u64>(), period in prop_oneof![Just(2u32), Just(10), Just(60)]) {
        let r = synth_regd(seed, 3, period).unwrap();
        prop_assert_eq!(r.series.len(), 3 * (3600 / period) as usize);
        prop_assert!(r.series.values.iter().all(|v| v.abs() <= 1.0));
        for h in 0..3 {
            let v = r.hour(h);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!(mean.abs() <= 0.02, "hour {h}: mean {mean}");
            prop_assert!(r.hourly_mileage[h] > 0.0);
        }
        prop_assert_eq!(&synth_regd(seed, 3, period).unwrap(), &r);
    }
}

#[test]
fn written_series_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let s = series(300, vec![1.5, -2.25, 3.0, 0.125]);
    s.write_csv(&path).unwrap();
    let back = ges_core::signals::load_csv(&path, "kW").unwrap();
    assert_eq!(back, s);
    assert!(ges_core::signals::load_csv(&path, "degC").is_err());
}

#[test]
fn hourly_means_average_each_hour() {
    let s = series(1800, vec![1.0, 3.0, 10.0, 20.0]);
    assert_eq!(hourly_means(&s, 2).unwrap(), [2.0, 15.0]);
    assert!(hourly_means(&s, 3).is_err());
}

#[test]
fn headerless_csv_with_comments() {
    let text = "# prices\n2021-07-01T00:00:00Z,0.05\n2021-07-01T01:00:00Z,0.06\n";
    let s = read_csv(text.as_bytes(), "inline", "$/kWh").unwrap();
    assert_eq!(s.period_s, 3600);
    assert_eq!(s.values, [0.05, 0.06]);
}
