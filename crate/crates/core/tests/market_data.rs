mod common;

use chrono::NaiveDate;
use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rb_e2e::market_data::{
    compute_log_returns, load_price_csv, read_price_csv, sample_covariance, sample_covariance_before, split_periods,
    trailing_features, write_price_csv,
};
use rb_e2e::synthetic::{business_days, factor_panel, factor_prices, SyntheticSpec};
use rb_e2e::{DateRange, Error, PeriodSplit, PricePanel, ReturnsPanel};

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn gap_fixture_is_sorted_and_forward_filled() {
    let p = load_price_csv(fixture("prices_gap.csv"), &[]).unwrap();
    assert_eq!(p.tickers, ["SPY", "GLD", "AGG"]);
    assert_eq!(p.dates, [d(2011, 1, 4), d(2011, 1, 5), d(2011, 1, 6), d(2011, 1, 7)]);
    // GLD gap on the 4th takes the value from the dropped leading row.
    assert_eq!(p.prices[(0, 1)], 50.0);
    assert_eq!(p.prices[(2, 0)], 102.0);

    let sub = load_price_csv(fixture("prices_gap.csv"), &["AGG".into(), "SPY".into()]).unwrap();
    assert_eq!(sub.tickers, ["AGG", "SPY"]);
    assert_eq!(sub.prices[(0, 0)], 80.0);
}

#[test]
fn csv_errors_are_classified() {
    let missing = load_price_csv(fixture("no_such_file.csv"), &[]).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
    assert!(missing.to_string().contains("no_such_file.csv"));

    let err = load_price_csv(fixture("prices_gap.csv"), &["IWM".into()]).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));

    let bad = "date,A,B\n2020-01-01,1.0,-2.0\n";
    match read_price_csv(bad.as_bytes(), &[]) {
        Err(Error::Data(msg)) => assert!(msg.contains("2020-01-01") && msg.contains('B'), "{msg}"),
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn log_return_examples() {
    let panel = PricePanel::new(
        vec![d(2020, 1, 1), d(2020, 1, 2), d(2020, 1, 3)],
        vec!["A".into(), "B".into()],
        DMatrix::from_row_slice(3, 2, &[100.0, 5.0, 100.0, 5.0, 121.0, 5.0]),
    )
    .unwrap();
    let r = compute_log_returns(&panel).unwrap();
    assert_eq!(r.returns[(0, 0)], 0.0);
    assert!((r.returns[(1, 0)] - 0.190620).abs() < 1e-6);
    assert!(r.returns.column(1).iter().all(|v| *v == 0.0));
    assert_eq!(r.base_date, d(2020, 1, 1));

    let one = PricePanel::new(vec![d(2020, 1, 1)], vec!["A".into()], DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert!(matches!(compute_log_returns(&one), Err(Error::InsufficientData(_))));
}

#[test]
fn csv_round_trip_preserves_prices() {
    let spec = SyntheticSpec {
        days: 30,
        ..SyntheticSpec::default()
    };
    let p = factor_prices(&spec);
    let mut buf = Vec::new();
    write_price_csv(&p, &mut buf).unwrap();
    let back = read_price_csv(buf.as_slice(), &[]).unwrap();
    assert_eq!(back, p);
}

#[test]
fn covariance_examples() {
    let r = ReturnsPanel::new(
        d(2020, 1, 1),
        vec![d(2020, 1, 2), d(2020, 1, 3)],
        vec!["A".into(), "B".into()],
        DMatrix::from_row_slice(2, 2, &[0.01, 0.02, -0.01, -0.02]),
    )
    .unwrap();
    // Window 2 is below n + 1 for two assets.
    assert!(matches!(
        sample_covariance(&r, d(2020, 1, 3), 2),
        Err(Error::InsufficientData(_))
    ));

    let r3 = ReturnsPanel::new(
        d(2020, 1, 1),
        vec![d(2020, 1, 2), d(2020, 1, 3), d(2020, 1, 4)],
        vec!["A".into(), "B".into()],
        DMatrix::from_row_slice(3, 2, &[0.01, 0.02, -0.01, -0.02, 0.0, 0.0]),
    )
    .unwrap();
    // Rank-1 input: [[1e-4, 2e-4], [2e-4, 4e-4]] plus jitter.
    let c = sample_covariance(&r3, d(2020, 1, 4), 3).unwrap();
    assert!(c.jitter >= 1e-8);
    assert!((c.sigma[(0, 1)] - 2e-4).abs() < 1e-15);
    assert!((c.sigma[(0, 0)] - 1e-4 - c.jitter).abs() < 1e-15);
    assert!(c.sigma.clone().cholesky().is_some());
}

#[test]
fn covariance_monte_carlo_near_identity() {
    let mut r = rng(3);
    let t = 10_000;
    let n = 3;
    let m = DMatrix::from_fn(t, n, |_, _| normal(&mut r));
    let dates = business_days(d(2000, 1, 3), t + 1);
    let panel = ReturnsPanel::new(
        dates[0],
        dates[1..].to_vec(),
        vec!["A".into(), "B".into(), "C".into()],
        m,
    )
    .unwrap();
    let c = sample_covariance_before(&panel, t, t).unwrap();
    assert!((c.sigma - DMatrix::identity(n, n)).amax() < 0.05);
}

#[test]
fn covariance_scan_is_symmetric_and_pd() {
    let r = factor_panel(&SyntheticSpec {
        days: 600,
        ..SyntheticSpec::default()
    });
    for end in (30..=r.len()).step_by(7) {
        let c = sample_covariance_before(&r, end, 30).unwrap();
        assert!((&c.sigma - c.sigma.transpose()).amax() < 1e-12);
        assert!(c.sigma.clone().cholesky().is_some());
        assert!(SymmetricEigen::new(c.sigma.clone()).eigenvalues.min() > 0.0);
    }
}

#[test]
fn feature_examples() {
    let dates = business_days(d(2020, 1, 6), 5);
    let a = [0.01, -0.01, 0.01, -0.01];
    let m = DMatrix::from_fn(4, 2, |t, i| a[t] * if i == 0 { 1.0 } else { 3.0 });
    let r = ReturnsPanel::new(dates[0], dates[1..].to_vec(), vec!["A".into(), "B".into()], m).unwrap();
    let x = trailing_features(&r, dates[4], 4).unwrap();
    assert!((x.0[0] + 0.5f64.sqrt()).abs() < 1e-12);
    assert!((x.0[1] - 0.5f64.sqrt()).abs() < 1e-12);

    let same = ReturnsPanel::new(
        dates[0],
        dates[1..].to_vec(),
        vec!["A".into(), "B".into()],
        DMatrix::from_fn(4, 2, |t, _| a[t]),
    )
    .unwrap();
    assert!(trailing_features(&same, dates[4], 4)
        .unwrap()
        .0
        .iter()
        .all(|v| *v == 0.0));
    assert!(matches!(
        trailing_features(&r, dates[4], 5),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn etf_default_split_dates() {
    let s = PeriodSplit::etf_default();
    assert_eq!(s.train, DateRange::new(d(2011, 1, 1), d(2014, 12, 31)).unwrap());
    assert_eq!(s.validation.start, d(2015, 1, 1));
    assert_eq!(s.evaluation.end, d(2021, 12, 31));
    s.validate().unwrap();
}

#[test]
fn empty_validation_is_rejected() {
    let r = factor_panel(&SyntheticSpec {
        days: 100,
        ..SyntheticSpec::default()
    });
    let split = PeriodSplit {
        train: DateRange::new(r.dates[0], r.dates[49]).unwrap(),
        validation: DateRange::new(d(2011, 3, 26), d(2011, 3, 27)).unwrap(),
        evaluation: DateRange::new(r.dates[60], r.dates[99]).unwrap(),
    };
    // 2011-03-26/27 is a weekend: no rows.
    assert!(matches!(split_periods(&r, &split), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_returns_round_trip(seed in 0u64..1000, days in 2usize..200) {
        let p = factor_prices(&SyntheticSpec { days, seed, n_assets: 3, ..SyntheticSpec::default() });
        let r = compute_log_returns(&p).unwrap();
        for i in 0..3 {
            let mut acc = 0.0;
            for t in 0..r.len() {
                acc += r.returns[(t, i)];
                let ratio = p.prices[(t + 1, i)] / p.prices[(0, i)];
                prop_assert!((acc.exp() - ratio).abs() <= 1e-12 * ratio.max(1.0));
            }
        }
    }

    #[test]
    fn splits_partition_rows(days in 30usize..300, a in 0.1f64..0.5, b in 0.1f64..0.4) {
        let r = factor_panel(&SyntheticSpec { days, n_assets: 2, ..SyntheticSpec::default() });
        let split = PeriodSplit::by_fraction(&r, a, b).unwrap();
        let v = split_periods(&r, &split).unwrap();
        prop_assert_eq!(v.train.len() + v.validation.len() + v.evaluation.len(), r.len());
        let mut dates = v.train.dates.clone();
        dates.extend(&v.validation.dates);
        dates.extend(&v.evaluation.dates);
        prop_assert_eq!(&dates, &r.dates);
        let mut concat: Vec<f64> = Vec::new();
        for view in [&v.train, &v.validation, &v.evaluation] {
            for t in 0..view.len() {
                concat.extend(view.returns.row(t).iter());
            }
        }
        let original: Vec<f64> = (0..r.len()).flat_map(|t| r.returns.row(t).iter().copied().collect::<Vec<_>>()).collect();
        prop_assert_eq!(concat, original);
    }
}
