//! Fixtures shared by the criterion benches.

use nalgebra::DVector;
use rb_e2e::market_data::{sample_covariance_before, trailing_features_before};
use rb_e2e::synthetic::{factor_panel, SyntheticSpec};
use rb_e2e::{CovarianceMatrix, FeatureVector, ReturnsPanel, RiskBudgets};

pub fn panel(n_assets: usize) -> ReturnsPanel {
    factor_panel(&SyntheticSpec {
        n_assets,
        days: 600,
        ..SyntheticSpec::default()
    })
}

/// Features and covariance at the end of `panel(n)`.
pub fn snapshot(n: usize) -> (FeatureVector, CovarianceMatrix) {
    let r = panel(n);
    let end = r.len();
    (
        trailing_features_before(&r, end, 60).expect("enough history"),
        sample_covariance_before(&r, end, 120).expect("enough history"),
    )
}

/// Spread-out logits so some coordinates sit at the floor.
pub fn logits(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| 3.0 * ((i as f64) * 1.7).sin())
}

pub fn budgets(n: usize) -> RiskBudgets {
    let raw = DVector::from_fn(n, |i, _| 1.0 + (i % 3) as f64);
    let total = raw.sum();
    RiskBudgets::from_vec(raw / total).expect("interior budgets")
}
