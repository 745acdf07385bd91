use proptest::prelude::*;
use rwkv_ts::data::{
    chronological_split, context_reach, load_csv, make_windows, persistence_forecast, sine_series, window_count,
    write_csv, Split, SplitRule, TimeSeries,
};
use rwkv_ts::numeric::Matrix;

fn fractions(train: f64, val: f64, test: f64) -> SplitRule {
    SplitRule::Fractions { train, val, test }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3..60)) {
        let rows = values.len() / 3;
        let m = Matrix::from_vec(rows, 3, values[..rows * 3].to_vec()).unwrap();
        let ts = TimeSeries::new(
            vec!["HUFL".into(), "MUFL".into(), "OT".into()],
            (0..rows).map(|r| format!("2016-07-01 {r:02}:00:00")).collect(),
            m,
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&ts, &path).unwrap();
        let back = load_csv(&path).unwrap();
        prop_assert_eq!(back.names, ts.names);
        prop_assert_eq!(back.timestamps, ts.timestamps);
        for (a, b) in back.values.as_slice().iter().zip(ts.values.as_slice()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn windows_respect_split_boundaries(len in 60usize..400, l in 1usize..20, t in 1usize..10, stride in 1usize..4) {
        let d = chronological_split("s", sine_series(len, 2, 12.0), fractions(0.6, 0.2, 0.2)).unwrap();
        prop_assert!(d.train.end <= d.val.start && d.val.end <= d.test.start && d.test.end <= len);
        for split in [Split::Train, Split::Val, Split::Test] {
            let range = d.range(split);
            let w = make_windows(&d, split, l, t, stride).unwrap();
            let reach = context_reach(&d, split, l);
            prop_assert!(reach < l.max(1));
            prop_assert_eq!(w.len(), window_count(range.len() + reach, l, t, stride));
            for s in &w {
                prop_assert!(s.origin >= range.start && s.origin + t <= range.end);
                prop_assert!(s.origin - l + reach >= range.start);
                for c in 0..2 {
                    prop_assert_eq!(s.target.get(0, c), d.series.values.get(s.origin, c));
                    prop_assert_eq!(s.input.get(l - 1, c), d.series.values.get(s.origin - 1, c));
                }
            }
        }
        let train = make_windows(&d, Split::Train, l, t, 1).unwrap();
        if let Some(last) = train.iter().map(|s| s.origin + t - 1).max() {
            prop_assert!(last < d.val.start);
        }
    }
}

#[test]
fn window_count_closed_form() {
    let d = chronological_split("s", sine_series(100, 1, 10.0), fractions(1.0, 0.0, 0.0)).unwrap();
    assert_eq!(make_windows(&d, Split::Train, 20, 5, 1).unwrap().len(), 76);
    assert_eq!(make_windows(&d, Split::Train, 20, 5, 3).unwrap().len(), 26);
    assert_eq!(make_windows(&d, Split::Train, 95, 5, 1).unwrap().len(), 1);
    assert!(make_windows(&d, Split::Val, 20, 5, 1).unwrap().is_empty());
}

#[test]
fn standardization_uses_training_rows_only() {
    let mut ts = sine_series(100, 1, 10.0);
    for r in 60..100 {
        ts.values.set(r, 0, 1e6);
    }
    let d = chronological_split("s", ts, fractions(0.6, 0.2, 0.2)).unwrap();
    let (scaled, scaler) = d.standardized().unwrap();
    assert!(scaler.mean[0].abs() < 0.1);
    let train: Vec<f64> = (0..60).map(|r| scaled.series.values.get(r, 0)).collect();
    let mean = train.iter().sum::<f64>() / 60.0;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn missing_file_is_an_io_error() {
    let e = load_csv("/nonexistent/ETTh1.csv").unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn persistence_repeats_last_row() {
    let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let f = persistence_forecast(&x, 3);
    assert_eq!(f.shape(), (3, 2));
    assert!((0..3).all(|t| f.row(t) == [3.0, 4.0]));
}
