//! Run configuration: JSON file, then command-line overrides, then defaults.

use std::path::Path;

use rb_e2e::experiments::Arm;
use rb_e2e::{DateRange, LossKind, PeriodSplit, ReturnsPanel, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "RB_E2E_SEED";

/// Every key is optional; anything missing falls back to a flag or default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tickers: Option<Vec<String>>,
    pub train_range: Option<DateRange>,
    pub validation_range: Option<DateRange>,
    pub evaluation_range: Option<DateRange>,
    /// Row fractions (train, validation) used when no explicit ranges are set.
    pub split_fractions: Option<[f64; 2]>,
    pub feature_lookback: Option<usize>,
    pub cov_window: Option<usize>,
    pub loss: Option<LossKind>,
    pub learning_rate: Option<f64>,
    pub steps: Option<usize>,
    pub hidden_neurons: Option<usize>,
    pub lower_bound_u: Option<f64>,
    pub seed: Option<u64>,
    pub rebalance_days: Option<usize>,
    pub solver_tol: Option<f64>,
    pub solver_max_iter: Option<usize>,
    pub seeds: Option<usize>,
    pub seed_start: Option<u64>,
    pub arms: Option<Vec<Arm>>,
    pub jobs: Option<usize>,
    pub iterations: Option<usize>,
    pub rng_seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<(Self, Option<Vec<u8>>), CliError> {
        let Some(path) = path else {
            return Ok((Self::default(), None));
        };
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        Ok((cfg, Some(bytes)))
    }
}

/// Training overrides shared by every command that trains.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainFlags {
    /// Loss: sharpe or cumulative_return.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long = "lr", allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub neurons: Option<usize>,
    /// Budget floor u (default 1/(10n)).
    #[arg(long = "lower-bound", allow_negative_numbers = true)]
    pub lower_bound_u: Option<f64>,
    #[arg(long)]
    pub rebalance: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub cov_window: Option<usize>,
}

/// Seed precedence: flag, config file, `RB_E2E_SEED`, then `default`.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, default: u64) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(default),
    }
}

pub fn train_config(file: &FileConfig, flags: &TrainFlags, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        loss_kind: flags.loss.or(file.loss).unwrap_or(d.loss_kind),
        learning_rate: flags.learning_rate.or(file.learning_rate).unwrap_or(d.learning_rate),
        steps: flags.steps.or(file.steps).unwrap_or(d.steps),
        hidden_neurons: flags.neurons.or(file.hidden_neurons).unwrap_or(d.hidden_neurons),
        lower_bound_u: flags.lower_bound_u.or(file.lower_bound_u),
        seed,
        rebalance_days: flags.rebalance.or(file.rebalance_days).unwrap_or(d.rebalance_days),
        feature_lookback: flags.lookback.or(file.feature_lookback).unwrap_or(d.feature_lookback),
        cov_window: flags.cov_window.or(file.cov_window).unwrap_or(d.cov_window),
        solver_tol: file.solver_tol.unwrap_or(d.solver_tol),
        solver_max_iter: file.solver_max_iter.unwrap_or(d.solver_max_iter),
    }
}

/// Explicit ranges win over fractions; with neither, the 2011-2021 ETF split.
pub fn period_split(file: &FileConfig, returns: &ReturnsPanel) -> Result<PeriodSplit, CliError> {
    let split = match (file.train_range, file.validation_range, file.evaluation_range) {
        (Some(train), Some(validation), Some(evaluation)) => PeriodSplit {
            train,
            validation,
            evaluation,
        },
        (None, None, None) => match file.split_fractions {
            Some([a, b]) => PeriodSplit::by_fraction(returns, a, b)?,
            None => PeriodSplit::etf_default(),
        },
        _ => {
            return Err(CliError::Usage(
                "train_range, validation_range and evaluation_range must be given together".into(),
            ))
        }
    };
    split.validate()?;
    Ok(split)
}

/// The fully resolved configuration recorded in every manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Effective {
    pub tickers: Vec<String>,
    pub split: PeriodSplit,
    pub train: TrainConfig,
}
