mod common;

use chrono::{Duration, NaiveDate};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rb_e2e::experiments::{
    cohort_dispersion, dispersion_from_paths, dispersion_stats, multi_seed_dispersion, random_search,
    risk_parity_benchmark, run_cohort, write_search_csv, PathSource,
};
use rb_e2e::synthetic::{business_days, factor_panel, SyntheticSpec};
use rb_e2e::{
    Arm, CumulativePath, DateRange, DispersionSummary, LossKind, PeriodSplit, ReturnsPanel, SearchSpace, SolverOptions,
    TrainConfig,
};

fn path(vals: &[f64]) -> CumulativePath {
    let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    CumulativePath {
        dates: (0..vals.len()).map(|k| d0 + Duration::days(k as i64)).collect(),
        values: vals.to_vec(),
    }
}

fn small() -> (ReturnsPanel, PeriodSplit, TrainConfig) {
    let r = factor_panel(&SyntheticSpec {
        n_assets: 4,
        days: 500,
        seed: 3,
        ..SyntheticSpec::default()
    });
    let split = PeriodSplit::by_fraction(&r, 0.5, 0.2).unwrap();
    let cfg = TrainConfig {
        hidden_neurons: 4,
        feature_lookback: 30,
        cov_window: 60,
        ..TrainConfig::default()
    };
    (r, split, cfg)
}

fn paths_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 1usize..30).prop_flat_map(|(k, len)| prop::collection::vec(prop::collection::vec(0.5f64..1.5, len), k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn v_is_seed_order_invariant(raw in paths_strategy(), rot in 0usize..8) {
        let paths: Vec<_> = raw.iter().map(|v| path(v)).collect();
        let mut rotated = paths.clone();
        rotated.rotate_left(rot % paths.len());
        rotated.reverse();
        let a = dispersion_from_paths(&paths).unwrap();
        let b = dispersion_from_paths(&rotated).unwrap();
        prop_assert_eq!(&a.v, &b.v);
        prop_assert!(a.v.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn inner_path_leaves_v_unchanged(raw in paths_strategy(), mix in 0.0f64..=1.0) {
        let paths: Vec<_> = raw.iter().map(|v| path(v)).collect();
        let a = dispersion_from_paths(&paths).unwrap();
        let inner: Vec<f64> = (0..a.v.len())
            .map(|t| (a.min[t] + mix * (a.max[t] - a.min[t])).clamp(a.min[t], a.max[t]))
            .collect();
        let mut more = paths.clone();
        more.push(path(&inner));
        let b = dispersion_from_paths(&more).unwrap();
        prop_assert_eq!(&a.v, &b.v);
    }

    #[test]
    fn summary_recomputes_from_paths(raw in paths_strategy()) {
        let paths: Vec<_> = raw.iter().map(|v| path(v)).collect();
        let rep = dispersion_from_paths(&paths).unwrap();
        let len = raw[0].len();
        let v: Vec<f64> = (0..len)
            .map(|t| {
                let hi = raw.iter().map(|p| p[t]).fold(f64::MIN, f64::max);
                let lo = raw.iter().map(|p| p[t]).fold(f64::MAX, f64::min);
                hi - lo
            })
            .collect();
        let s = DispersionSummary::from_v(&v);
        prop_assert!((s.max_v - rep.summary.max_v).abs() <= 1e-15);
        prop_assert!((s.avg_v - rep.summary.avg_v).abs() <= 1e-15);
        prop_assert!((s.last_day_v - rep.summary.last_day_v).abs() <= 1e-15);
    }
}

#[test]
fn misaligned_paths_are_rejected() {
    let a = path(&[1.0, 1.1]);
    let mut b = path(&[1.0, 1.2]);
    b.dates[1] += Duration::days(1);
    assert!(dispersion_from_paths(&[a, b]).is_err());
}

#[test]
fn zero_dispersion_formats_as_zero_percent() {
    let rep = dispersion_from_paths(&[path(&[1.0, 1.05]), path(&[1.0, 1.05])]).unwrap();
    let row = dispersion_stats(&rep);
    assert_eq!(
        (row.max_v.as_str(), row.avg_v.as_str(), row.last_day_v.as_str()),
        ("0.00%", "0.00%", "0.00%")
    );
    let rep = dispersion_from_paths(&[path(&[1.0, 1.0]), path(&[1.0, 1.2007])]).unwrap();
    assert_eq!(dispersion_stats(&rep).max_v, "20.07%");
}

#[test]
fn identical_seeds_have_no_dispersion() {
    let (r, split, cfg) = small();
    let rep = multi_seed_dispersion(&cfg, &[5, 5, 5], &r, &split.train, PathSource::Training).unwrap();
    assert!(rep.v.iter().all(|v| *v == 0.0));
    assert!(multi_seed_dispersion(&cfg, &[5], &r, &split.train, PathSource::Training).is_err());
}

#[test]
fn cohort_is_independent_of_worker_count() {
    let (r, split, cfg) = small();
    let seeds: Vec<u64> = (0..6).collect();
    let mut reports = Vec::new();
    for jobs in [Some(1), Some(3), None] {
        let runs = run_cohort(&cfg, &seeds, &r, &split.train, jobs).unwrap();
        let train = cohort_dispersion(&runs, &cfg, &r, PathSource::Training, jobs).unwrap();
        let eval = cohort_dispersion(&runs, &cfg, &r, PathSource::Evaluation(split.evaluation), jobs).unwrap();
        let mut a = Vec::new();
        train.write_csv(&mut a).unwrap();
        eval.write_csv(&mut a).unwrap();
        reports.push(a);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn cohort_records_failures() {
    let (r, split, cfg) = small();
    // A range too short to train fails for every seed.
    let short = DateRange::new(r.dates[0], r.dates[10]).unwrap();
    let runs = run_cohort(&cfg, &[0, 1], &r, &short, Some(2)).unwrap();
    assert!(runs.iter().all(|x| x.result.is_err()));
    let err = cohort_dispersion(&runs, &cfg, &r, PathSource::Training, None).unwrap_err();
    assert_eq!(err.stage(), Some(rb_e2e::Stage::Experiment));

    let mut runs = run_cohort(&cfg, &[0, 1, 2], &r, &split.train, None).unwrap();
    runs[1].result = Err(rb_e2e::Error::Numerical("forced".into()));
    let rep = cohort_dispersion(&runs, &cfg, &r, PathSource::Training, None).unwrap();
    assert!(rep.is_partial());
    assert_eq!(rep.failures[0].seed, 1);
    assert_eq!(rep.cohort_size, 2);
}

#[test]
fn unbounded_arm_changes_only_the_floor() {
    let cfg = TrainConfig::default();
    let u = Arm::Unbounded.apply(&cfg);
    assert_eq!(u.lower_bound_u, Some(f64::EPSILON));
    assert_eq!(
        TrainConfig {
            lower_bound_u: None,
            ..u
        },
        cfg
    );
    assert_eq!(Arm::Bounded.apply(&cfg), cfg);
    assert_eq!("unbounded".parse::<Arm>().unwrap(), Arm::Unbounded);
}

#[test]
fn search_over_single_config() {
    let (r, split, cfg) = small();
    let space = SearchSpace {
        neurons: vec![4],
        learning_rates: vec![1.0],
        steps: vec![2],
    };
    let recs = random_search(&space, 5, 1, &r, &split, LossKind::Sharpe, &cfg, Some(2)).unwrap();
    assert_eq!(recs.len(), 5);
    assert!(recs
        .iter()
        .all(|x| x.validation_metric == recs[0].validation_metric && x.config == recs[0].config));
    let order: Vec<usize> = recs.iter().map(|x| x.iteration).collect();
    assert_eq!(order, [0, 1, 2, 3, 4]);
}

#[test]
fn search_is_reproducible_and_ranked() {
    let (r, split, cfg) = small();
    let space = SearchSpace {
        neurons: vec![4, 7],
        learning_rates: vec![0.5, 10.0],
        steps: vec![2, 3],
    };
    assert_eq!(space.sample(20, 9), space.sample(20, 9));
    assert_ne!(space.sample(20, 9), space.sample(20, 10));
    let a = random_search(&space, 8, 9, &r, &split, LossKind::CumulativeReturn, &cfg, Some(1)).unwrap();
    let b = random_search(&space, 8, 9, &r, &split, LossKind::CumulativeReturn, &cfg, None).unwrap();
    assert_eq!(a, b);
    let mut ranks: Vec<usize> = a.iter().map(|x| x.rank).collect();
    ranks.sort();
    assert_eq!(ranks, (1..=a.len()).collect::<Vec<_>>());
    assert!(a.windows(2).all(|w| w[0].validation_metric >= w[1].validation_metric));
    let mut csv = Vec::new();
    write_search_csv(&a, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("iteration,hidden_neurons,learning_rate,steps,loss,metric,rank\n"));
    assert_eq!(text.lines().count(), a.len() + 1);
}

#[test]
fn default_grid_size() {
    assert_eq!(SearchSpace::default().size(), 3 * 14 * 6);
}

#[test]
fn benchmark_on_diagonal_panel_is_inverse_vol() {
    let mut rg = rng(41);
    let vols = [0.005, 0.01, 0.02];
    let t = 400;
    let m = DMatrix::from_fn(t, 3, |_, i| vols[i] * normal(&mut rg));
    let dates = business_days(NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(), t + 1);
    let r = ReturnsPanel::new(
        dates[0],
        dates[1..].to_vec(),
        vec!["A".into(), "B".into(), "C".into()],
        m,
    )
    .unwrap();
    let range = DateRange::new(r.dates[300], r.dates[399]).unwrap();
    let mut seen = Vec::new();
    rb_e2e::trainer::rolling_backtest(&r, &range, 21, 300, |j| {
        let s = rb_e2e::market_data::sample_covariance_before(&r, j, 300)?;
        let w =
            rb_e2e::rb_layer::solve_risk_budgeting(&s, &rb_e2e::RiskBudgets::uniform(3), &SolverOptions::default())?
                .weights;
        seen.push(w.clone());
        Ok(w)
    })
    .unwrap();
    let inv: Vec<f64> = vols.iter().map(|v| 1.0 / v).collect();
    let total: f64 = inv.iter().sum();
    for w in seen {
        for i in 0..3 {
            assert!((w[i] - inv[i] / total).abs() < 0.03, "{w}");
        }
    }
    assert!(risk_parity_benchmark(&r, &range, 21, 300, &SolverOptions::default()).is_ok());
}

#[test]
fn single_asset_benchmark_tracks_the_asset() {
    let full = factor_panel(&SyntheticSpec {
        n_assets: 2,
        days: 200,
        ..SyntheticSpec::default()
    });
    let one = ReturnsPanel::new(
        full.base_date,
        full.dates.clone(),
        vec!["SYN0".into()],
        full.returns.columns(0, 1).into_owned(),
    )
    .unwrap();
    let range = DateRange::new(one.dates[50], one.dates[199]).unwrap();
    let p = risk_parity_benchmark(&one, &range, 21, 50, &SolverOptions::default()).unwrap();
    let mut wealth = 1.0;
    for (k, t) in (50..200).enumerate() {
        wealth *= one.returns[(t, 0)].exp();
        assert!((p.values[k + 1] - wealth).abs() < 1e-12 * wealth);
    }
}
