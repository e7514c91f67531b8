//! Seed-dispersion studies, random hyperparameter search and the risk-parity
//! benchmark.
//!
//! Dispersion at date `t` is the range `v(t) = max_s P_s(t) - min_s P_s(t)`
//! over the cumulative-return paths `P_s` of a seed cohort.

use std::io::Write;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounded_softmax::RiskBudgets;
use crate::error::{Error, Result, ResultExt, Stage};
use crate::losses::LossKind;
use crate::market_data::{sample_covariance_before, DateRange, PeriodSplit, ReturnsPanel};
use crate::rb_layer::{solve_risk_budgeting, SolverOptions};
use crate::trainer::{evaluate, rolling_backtest, train, CumulativePath, TrainConfig, TrainResult};

/// Budget floor used by the unbounded arm.
pub const UNBOUNDED_FLOOR: f64 = f64::EPSILON;

/// Which softmax feeds the risk-budgeting layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Lower-bounded softmax with the configured floor.
    Bounded,
    /// Plain softmax; budgets floored only at machine epsilon.
    Unbounded,
}

impl Arm {
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        match self {
            Arm::Bounded => cfg.clone(),
            Arm::Unbounded => TrainConfig {
                lower_bound_u: Some(UNBOUNDED_FLOOR),
                ..cfg.clone()
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Bounded => "bounded",
            Arm::Unbounded => "unbounded",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounded" => Ok(Arm::Bounded),
            "unbounded" => Ok(Arm::Unbounded),
            other => Err(Error::Config(format!("unknown arm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSummary {
    pub max_v: f64,
    pub avg_v: f64,
    pub last_day_v: f64,
}

impl DispersionSummary {
    pub fn from_v(v: &[f64]) -> Self {
        let max_v = v.iter().cloned().fold(0.0, f64::max);
        let avg_v = if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        Self {
            max_v,
            avg_v,
            last_day_v: v.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub dates: Vec<NaiveDate>,
    pub v: Vec<f64>,
    pub midpoints: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub summary: DispersionSummary,
    pub cohort_size: usize,
    /// Seeds whose run failed; the statistics cover the remaining cohort.
    pub failures: Vec<SeedFailure>,
}

impl DispersionReport {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "date,v,midpoint,min,max")?;
        for i in 0..self.dates.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.dates[i], self.v[i], self.midpoints[i], self.min[i], self.max[i]
            )?;
        }
        Ok(())
    }
}

/// Pointwise envelope of date-aligned paths.
pub fn dispersion_from_paths(paths: &[CumulativePath]) -> Result<DispersionReport> {
    let first = paths
        .first()
        .ok_or_else(|| Error::Config("dispersion needs at least one path".into()))?;
    if paths.iter().any(|p| p.dates != first.dates) {
        return Err(Error::Data("cohort paths are not aligned on the same dates".into()));
    }
    let len = first.len();
    let mut min = vec![f64::INFINITY; len];
    let mut max = vec![f64::NEG_INFINITY; len];
    for p in paths {
        for (t, &val) in p.values.iter().enumerate() {
            min[t] = min[t].min(val);
            max[t] = max[t].max(val);
        }
    }
    let v: Vec<f64> = max.iter().zip(&min).map(|(hi, lo)| hi - lo).collect();
    let midpoints = max.iter().zip(&min).map(|(hi, lo)| 0.5 * (hi + lo)).collect();
    Ok(DispersionReport {
        dates: first.dates.clone(),
        summary: DispersionSummary::from_v(&v),
        v,
        midpoints,
        min,
        max,
        cohort_size: paths.len(),
        failures: Vec::new(),
    })
}

/// Runs `f` on a pool capped at `jobs` workers (all cores when `None`).
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub struct CohortRun {
    pub seed: u64,
    pub result: Result<TrainResult>,
}

/// Trains one run per seed. Output order follows `seeds`.
pub fn run_cohort(
    base: &TrainConfig,
    seeds: &[u64],
    returns: &ReturnsPanel,
    train_range: &DateRange,
    jobs: Option<usize>,
) -> Result<Vec<CohortRun>> {
    with_pool(jobs, || {
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = TrainConfig { seed, ..base.clone() };
                CohortRun {
                    seed,
                    result: train(returns, train_range, &cfg),
                }
            })
            .collect()
    })
}

/// Where cohort paths come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathSource {
    /// Trained parameters, static weights over the training loss window.
    Training,
    /// Trained parameters frozen and rolled over the given range.
    Evaluation(DateRange),
}

/// Dispersion over an already-trained cohort.
pub fn cohort_dispersion(
    runs: &[CohortRun],
    base: &TrainConfig,
    returns: &ReturnsPanel,
    source: PathSource,
    jobs: Option<usize>,
) -> Result<DispersionReport> {
    let paths: Vec<(u64, Result<CumulativePath>)> = with_pool(jobs, || {
        runs.par_iter()
            .map(|run| {
                let path = match (&run.result, source) {
                    (Err(e), _) => Err(Error::Numerical(e.to_string())),
                    (Ok(res), PathSource::Training) => Ok(res.cumret_path.clone()),
                    (Ok(res), PathSource::Evaluation(range)) => {
                        let cfg = TrainConfig {
                            seed: run.seed,
                            ..base.clone()
                        };
                        evaluate(&res.params, returns, &cfg, &range)
                    }
                };
                (run.seed, path)
            })
            .collect()
    })?;
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (seed, p) in paths {
        match p {
            Ok(p) => ok.push(p),
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    if ok.len() < 2 {
        return Err(Error::Numerical(format!(
            "only {} of {} cohort runs succeeded; first failure: {}",
            ok.len(),
            runs.len(),
            failures.first().map(|f| f.error.as_str()).unwrap_or("none")
        ))
        .at(Stage::Experiment, "dispersion"));
    }
    let mut report = dispersion_from_paths(&ok)?;
    report.failures = failures;
    Ok(report)
}

pub fn multi_seed_dispersion(
    base: &TrainConfig,
    seeds: &[u64],
    returns: &ReturnsPanel,
    train_range: &DateRange,
    source: PathSource,
) -> Result<DispersionReport> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!(
            "dispersion needs >= 2 seeds, got {}",
            seeds.len()
        )));
    }
    let runs = run_cohort(base, seeds, returns, train_range, None)?;
    cohort_dispersion(&runs, base, returns, source, None)
}

/// Table row with the three statistics as percentages (2 decimals).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub max_v: String,
    pub avg_v: String,
    pub last_day_v: String,
}

pub fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

pub fn dispersion_stats(report: &DispersionReport) -> SummaryRow {
    let s = &report.summary;
    SummaryRow {
        max_v: percent(s.max_v),
        avg_v: percent(s.avg_v),
        last_day_v: percent(s.last_day_v),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub neurons: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub steps: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            neurons: vec![7, 16, 32],
            learning_rates: vec![
                0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0,
            ],
            steps: vec![5, 10, 15, 20, 25, 30],
        }
    }
}

impl SearchSpace {
    pub fn size(&self) -> usize {
        self.neurons.len() * self.learning_rates.len() * self.steps.len()
    }

    /// Draws `iterations` configurations uniformly with replacement.
    pub fn sample(&self, iterations: usize, rng_seed: u64) -> Vec<(usize, f64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        (0..iterations)
            .map(|_| {
                let h = self.neurons[rng.random_range(0..self.neurons.len())];
                let lr = self.learning_rates[rng.random_range(0..self.learning_rates.len())];
                let s = self.steps[rng.random_range(0..self.steps.len())];
                (h, lr, s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub iteration: usize,
    pub config: TrainConfig,
    pub validation_metric: f64,
    pub rank: usize,
}

/// Sharpe ratio of daily path returns (loss = Sharpe) or total return
/// (loss = cumulative return) over the validation path.
pub fn validation_metric(kind: LossKind, path: &CumulativePath) -> f64 {
    match kind {
        LossKind::CumulativeReturn => path.last() - 1.0,
        LossKind::Sharpe => {
            let r = path.daily_returns();
            let t = r.len() as f64;
            let mean = r.iter().sum::<f64>() / t;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (t - 1.0);
            if var > 0.0 {
                mean / var.sqrt()
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn random_search(
    space: &SearchSpace,
    iterations: usize,
    rng_seed: u64,
    returns: &ReturnsPanel,
    split: &PeriodSplit,
    loss_kind: LossKind,
    base: &TrainConfig,
    jobs: Option<usize>,
) -> Result<Vec<SearchRecord>> {
    if space.size() == 0 {
        return Err(Error::Config("search grid is empty".into()));
    }
    if iterations == 0 {
        return Err(Error::Config("search needs >= 1 iteration".into()));
    }
    split.validate()?;
    let draws = space.sample(iterations, rng_seed);
    let outcomes: Vec<(usize, TrainConfig, Result<f64>)> = with_pool(jobs, || {
        draws
            .par_iter()
            .enumerate()
            .map(|(iteration, &(h, lr, steps))| {
                let cfg = TrainConfig {
                    loss_kind,
                    hidden_neurons: h,
                    learning_rate: lr,
                    steps,
                    ..base.clone()
                };
                let metric = train(returns, &split.train, &cfg)
                    .and_then(|res| evaluate(&res.params, returns, &cfg, &split.validation))
                    .map(|path| validation_metric(loss_kind, &path));
                (iteration, cfg, metric)
            })
            .collect()
    })?;

    let mut records: Vec<SearchRecord> = outcomes
        .into_iter()
        .filter_map(|(iteration, config, m)| {
            m.ok().filter(|v| !v.is_nan()).map(|validation_metric| SearchRecord {
                iteration,
                config,
                validation_metric,
                rank: 0,
            })
        })
        .collect();
    if records.is_empty() {
        return Err(Error::Numerical("every search iteration failed".into()).at(Stage::Experiment, "random search"));
    }
    records.sort_by(|a, b| {
        b.validation_metric
            .total_cmp(&a.validation_metric)
            .then(a.iteration.cmp(&b.iteration))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(records)
}

pub fn write_search_csv(records: &[SearchRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,hidden_neurons,learning_rate,steps,loss,metric,rank")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.config.hidden_neurons,
            r.config.learning_rate,
            r.config.steps,
            r.config.loss_kind,
            r.validation_metric,
            r.rank
        )?;
    }
    Ok(())
}

/// Rolling equal-budget portfolio on the trailing sample covariance.
pub fn risk_parity_benchmark(
    returns: &ReturnsPanel,
    range: &DateRange,
    rebalance_days: usize,
    cov_window: usize,
    opts: &SolverOptions,
) -> Result<CumulativePath> {
    let budgets = RiskBudgets::uniform(returns.n_assets());
    rolling_backtest(returns, range, rebalance_days, cov_window, |j| {
        let sigma = sample_covariance_before(returns, j, cov_window).stage(Stage::Covariance, || "benchmark".into())?;
        Ok(solve_risk_budgeting(&sigma, &budgets, opts)
            .stage(Stage::RiskBudgeting, || "benchmark".into())?
            .weights)
    })
}
