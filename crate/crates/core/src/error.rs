use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage an error was raised in. Used to tag errors that cross
/// component boundaries in the end-to-end forward/backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Features,
    Covariance,
    Network,
    BoundedSoftmax,
    RiskBudgeting,
    Loss,
    Training,
    Evaluation,
    Experiment,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Data => "data",
            Stage::Features => "features",
            Stage::Covariance => "covariance",
            Stage::Network => "network",
            Stage::BoundedSoftmax => "bounded-softmax",
            Stage::RiskBudgeting => "risk-budgeting",
            Stage::Loss => "loss",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
            Stage::Experiment => "experiment",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible lower bound u = {u} for n = {n} (requires u <= 1/n)")]
    Infeasible { u: f64, n: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("portfolio wiped out at step {step} (1 + r = {gross})")]
    Bankruptcy { step: usize, gross: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("[{stage}] {context}: {source}")]
    Stage {
        stage: Stage,
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps `self` with the pipeline stage and a short context string.
    pub fn at(self, stage: Stage, context: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// The outermost stage tag, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// True for failures of the numerical machinery (solver, degenerate
    /// variance, bankruptcy) as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Convergence { .. }
                | Error::Degenerate(_)
                | Error::Bankruptcy { .. }
                | Error::Numerical(_)
                | Error::Domain(_)
        )
    }

    pub fn is_data(&self) -> bool {
        matches!(
            self.root(),
            Error::Io { .. } | Error::Schema(_) | Error::Data(_) | Error::InsufficientData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait ResultExt<T> {
    fn stage(self, stage: Stage, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn stage(self, stage: Stage, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.at(stage, context()))
    }
}
