//! End-to-end wiring: features -> network -> bounded softmax -> risk-budgeting
//! layer -> normalization -> loss, the matching backward chain, seeded
//! full-batch gradient descent and frozen rolling evaluation.
//!
//! Training takes one feature/covariance snapshot at the start of the training
//! window and scores static weights over the rest of the window. The snapshot
//! uses the trailing rows before the window when the panel has them; otherwise
//! the first `max(feature_lookback, cov_window)` rows of the panel are spent as
//! warm-up and the loss window starts after them.

use std::io::Write;
use std::ops::Range;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bounded_softmax::{bounded_softmax, default_lower_bound, ActiveSet, RiskBudgets};
use crate::error::{Error, Result, ResultExt, Stage};
use crate::losses::{evaluate_loss, LossKind, PortfolioPath};
use crate::market_data::{
    sample_covariance_before, trailing_features_before, CovarianceMatrix, DateRange, FeatureVector, ReturnsPanel,
    DEFAULT_COV_WINDOW, DEFAULT_FEATURE_LOOKBACK,
};
use crate::network::{self, init_params, ForwardTape, NetworkParams, ParamGrads, ParamSnapshot};
use crate::rb_layer::{normalization_vjp, rb_budget_vjp, solve_risk_budgeting, RbSolution, SolverOptions};

pub const DEFAULT_REBALANCE_DAYS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub steps: usize,
    pub hidden_neurons: usize,
    /// Budget floor; `None` means `1 / (10 n)`.
    #[serde(default)]
    pub lower_bound_u: Option<f64>,
    pub seed: u64,
    pub rebalance_days: usize,
    pub feature_lookback: usize,
    pub cov_window: usize,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iter")]
    pub solver_max_iter: usize,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

impl Default for TrainConfig {
    /// Hidden width 7, learning rate 10, 5 steps, Sharpe loss.
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Sharpe,
            learning_rate: 10.0,
            steps: 5,
            hidden_neurons: 7,
            lower_bound_u: None,
            seed: 0,
            rebalance_days: DEFAULT_REBALANCE_DAYS,
            feature_lookback: DEFAULT_FEATURE_LOOKBACK,
            cov_window: DEFAULT_COV_WINDOW,
            solver_tol: default_tol(),
            solver_max_iter: default_max_iter(),
        }
    }
}

impl TrainConfig {
    pub fn floor(&self, n: usize) -> f64 {
        self.lower_bound_u.unwrap_or_else(|| default_lower_bound(n))
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver_tol,
            max_iter: self.solver_max_iter,
            trace: false,
        }
    }

    /// Rows of history needed before the first decision.
    pub fn min_history(&self) -> usize {
        self.feature_lookback.max(self.cov_window)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.hidden_neurons == 0 {
            return Err(Error::Config("hidden_neurons must be >= 1".into()));
        }
        if self.rebalance_days == 0 {
            return Err(Error::Config("rebalance_days must be >= 1".into()));
        }
        let u = self.floor(n);
        if !(u > 0.0) || u > 1.0 / n as f64 {
            return Err(Error::Config(format!("lower bound {u} outside (0, 1/{n}]")));
        }
        Ok(())
    }
}

/// Everything the backward chain needs from one forward pass.
#[derive(Debug, Clone)]
pub struct E2eTape {
    pub network: ForwardTape,
    pub budgets: RiskBudgets,
    pub active_set: ActiveSet,
    pub solution: RbSolution,
}

pub fn e2e_forward(
    params: &NetworkParams,
    x: &FeatureVector,
    sigma: &CovarianceMatrix,
    u: f64,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, E2eTape)> {
    let (logits, net_tape) = network::forward(params, x).stage(Stage::Network, || "forward".into())?;
    let (budgets, active_set) = bounded_softmax(&logits, u).stage(Stage::BoundedSoftmax, || "forward".into())?;
    let solution = solve_risk_budgeting(sigma, &budgets, opts).stage(Stage::RiskBudgeting, || "solve".into())?;
    let weights = solution.weights.clone();
    Ok((
        weights,
        E2eTape {
            network: net_tape,
            budgets,
            active_set,
            solution,
        },
    ))
}

/// Chains `dR/dw -> dw/dy -> dy/db -> db/dx -> dx/dtheta`.
pub fn e2e_backward(params: &NetworkParams, tape: &E2eTape, dl_dw: &DVector<f64>) -> Result<ParamGrads> {
    let y = &tape.solution.y_star;
    if dl_dw.len() != y.len() {
        return Err(Error::Domain("loss gradient length does not match portfolio".into()));
    }
    let dl_dy = normalization_vjp(y, dl_dw);
    let dl_db = rb_budget_vjp(&tape.solution, &dl_dy);
    let dl_dx = tape.active_set.vjp(&dl_db);
    let (grads, _) = network::backward(params, &tape.network, &dl_dx).stage(Stage::Network, || "backward".into())?;
    Ok(grads)
}

/// Wealth path starting at 1.0 on the trading day before the first return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativePath {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl CumulativePath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap_or(&1.0)
    }

    /// Daily simple returns implied by consecutive path values.
    pub fn daily_returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "date,value")?;
        for (d, v) in self.dates.iter().zip(&self.values) {
            writeln!(out, "{d},{v}")?;
        }
        Ok(())
    }

    /// Compounds static weights over simple returns of `rows`.
    fn static_weights(returns: &ReturnsPanel, rows: Range<usize>, w: &DVector<f64>) -> Self {
        let simple = returns.simple_returns(rows.clone());
        let mut dates = vec![returns.date_before(rows.start)];
        let mut values = vec![1.0];
        let mut wealth = 1.0;
        for (k, t) in rows.enumerate() {
            wealth *= 1.0 + simple.row(k).transpose().dot(w);
            dates.push(returns.dates[t]);
            values.push(wealth);
        }
        Self { dates, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub solver_iterations: usize,
    pub min_budget: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: NetworkParams,
    pub loss_trace: Vec<f64>,
    pub cumret_path: CumulativePath,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Weights of the trained network at the training snapshot.
    pub final_weights: DVector<f64>,
    /// Rows used for the loss.
    pub loss_rows: Range<usize>,
}

/// Serialized form of a [`TrainResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub config: TrainConfig,
    pub params: ParamSnapshot,
    pub loss_trace: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub final_weights: Vec<f64>,
    pub loss_window: DateRange,
}

impl TrainResult {
    pub fn to_record(&self, cfg: &TrainConfig) -> TrainRecord {
        let dates = &self.cumret_path.dates;
        TrainRecord {
            config: cfg.clone(),
            params: self.params.to_snapshot(),
            loss_trace: self.loss_trace.clone(),
            diagnostics: self.diagnostics.clone(),
            final_weights: self.final_weights.iter().copied().collect(),
            loss_window: DateRange {
                start: dates[1],
                end: *dates.last().expect("non-empty loss window"),
            },
        }
    }
}

/// Snapshot position and loss rows for a training range.
pub fn training_layout(returns: &ReturnsPanel, range: &DateRange, cfg: &TrainConfig) -> Result<Range<usize>> {
    let rows = returns.index_range(range);
    if rows.is_empty() {
        return Err(Error::Config(format!("training range {range} selects no rows")));
    }
    let snap = rows.start.max(cfg.min_history());
    if snap + 2 > rows.end {
        return Err(Error::InsufficientData(format!(
            "training range {range} has {} rows; need {} of warm-up plus 2 for the loss",
            rows.len(),
            cfg.min_history()
        )));
    }
    Ok(snap..rows.end)
}

pub fn train(returns: &ReturnsPanel, range: &DateRange, cfg: &TrainConfig) -> Result<TrainResult> {
    let n = returns.n_assets();
    cfg.validate(n)?;
    let loss_rows = training_layout(returns, range, cfg).stage(Stage::Training, || format!("layout {range}"))?;
    let snap = loss_rows.start;
    let x = trailing_features_before(returns, snap, cfg.feature_lookback)
        .stage(Stage::Features, || format!("snapshot before {}", returns.dates[snap]))?;
    let sigma = sample_covariance_before(returns, snap, cfg.cov_window)
        .stage(Stage::Covariance, || format!("snapshot before {}", returns.dates[snap]))?;
    let simple = returns.simple_returns(loss_rows.clone());
    let u = cfg.floor(n);
    let opts = cfg.solver();

    let mut params = init_params(cfg.seed, n, cfg.hidden_neurons);
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut diagnostics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let ctx = || format!("step {step}");
        let (w, tape) = e2e_forward(&params, &x, &sigma, u, &opts).stage(Stage::Training, ctx)?;
        let path = PortfolioPath::new(w, simple.clone()).stage(Stage::Loss, ctx)?;
        let lv = evaluate_loss(cfg.loss_kind, &path).stage(Stage::Loss, ctx)?;
        let grads = e2e_backward(&params, &tape, &lv.grad).stage(Stage::Training, ctx)?;
        diagnostics.push(StepDiagnostics {
            step,
            loss: lv.loss,
            grad_norm: grads.norm(),
            solver_iterations: tape.solution.iterations,
            min_budget: tape.budgets.as_vector().min(),
        });
        loss_trace.push(lv.loss);
        let updated: Vec<f64> = params
            .flatten()
            .iter()
            .zip(grads.flatten())
            .map(|(p, g)| p - cfg.learning_rate * g)
            .collect();
        params = params.with_flat(&updated)?;
    }

    let (final_weights, _) =
        e2e_forward(&params, &x, &sigma, u, &opts).stage(Stage::Training, || "final forward".into())?;
    let cumret_path = CumulativePath::static_weights(returns, loss_rows.clone(), &final_weights);
    Ok(TrainResult {
        params,
        loss_trace,
        cumret_path,
        diagnostics,
        final_weights,
        loss_rows,
    })
}

/// Rolling constant-mix backtest over `range`.
///
/// Every `rebalance_days` rows, `weights_at(j)` is called with the index of the
/// first row the weights will be applied to; it must only use rows `< j`.
/// Rows before `min_history` are skipped so every decision has full history.
pub fn rolling_backtest<F>(
    returns: &ReturnsPanel,
    range: &DateRange,
    rebalance_days: usize,
    min_history: usize,
    mut weights_at: F,
) -> Result<CumulativePath>
where
    F: FnMut(usize) -> Result<DVector<f64>>,
{
    if rebalance_days == 0 {
        return Err(Error::Config("rebalance_days must be >= 1".into()));
    }
    let rows = returns.index_range(range);
    let start = rows.start.max(min_history);
    if start >= rows.end {
        return Err(Error::InsufficientData(format!(
            "range {range} has no rows with {min_history} rows of prior history"
        )));
    }
    let simple = returns.simple_returns(start..rows.end);
    let mut dates = vec![returns.date_before(start)];
    let mut values = vec![1.0];
    let mut wealth = 1.0;
    let mut w = DVector::zeros(returns.n_assets());
    for (k, t) in (start..rows.end).enumerate() {
        if k % rebalance_days == 0 {
            w = weights_at(t).stage(Stage::Evaluation, || format!("rebalance on {}", returns.dates[t]))?;
        }
        wealth *= 1.0 + simple.row(k).transpose().dot(&w);
        dates.push(returns.dates[t]);
        values.push(wealth);
    }
    Ok(CumulativePath { dates, values })
}

/// Frozen-parameter rolling evaluation.
pub fn evaluate(
    params: &NetworkParams,
    returns: &ReturnsPanel,
    cfg: &TrainConfig,
    range: &DateRange,
) -> Result<CumulativePath> {
    let n = returns.n_assets();
    let u = cfg.floor(n);
    let opts = cfg.solver();
    rolling_backtest(returns, range, cfg.rebalance_days, cfg.min_history(), |j| {
        let x =
            trailing_features_before(returns, j, cfg.feature_lookback).stage(Stage::Features, || "rebalance".into())?;
        let sigma =
            sample_covariance_before(returns, j, cfg.cov_window).stage(Stage::Covariance, || "rebalance".into())?;
        Ok(e2e_forward(params, &x, &sigma, u, &opts)?.0)
    })
}
