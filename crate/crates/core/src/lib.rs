//! End-to-end risk-budgeting portfolios.
//!
//! A small network maps asset features to logits, a lower-bounded softmax
//! turns them into strictly positive risk budgets, and a convex
//! risk-budgeting layer maps budgets to long-only weights. Gradients of a
//! Sharpe-ratio or cumulative-return loss flow back through both implicit
//! layers. The [`experiments`] module measures how much trained portfolios
//! depend on the network's random initialization.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounded_softmax;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod market_data;
pub mod network;
pub mod rb_layer;
pub mod synthetic;
pub mod trainer;

pub use bounded_softmax::{bounded_softmax, bounded_softmax_jacobian, bounded_softmax_oracle, RiskBudgets};
pub use error::{Error, Result, Stage};
pub use experiments::{Arm, DispersionReport, DispersionSummary, SearchRecord, SearchSpace};
pub use losses::{LossKind, PortfolioPath};
pub use market_data::{CovarianceMatrix, DateRange, FeatureVector, PeriodSplit, PricePanel, ReturnsPanel};
pub use network::NetworkParams;
pub use rb_layer::{RbSolution, SolverOptions};
pub use trainer::{CumulativePath, TrainConfig, TrainResult};
