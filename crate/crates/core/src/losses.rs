//! Risk-reward losses over a window of realized returns with static weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sharpe,
    CumulativeReturn,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharpe" => Ok(LossKind::Sharpe),
            "cumulative_return" | "cumret" => Ok(LossKind::CumulativeReturn),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Sharpe => "sharpe",
            LossKind::CumulativeReturn => "cumulative_return",
        })
    }
}

/// Static-weight portfolio over a window of simple asset returns.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioPath {
    pub weights: DVector<f64>,
    /// T x n simple returns.
    pub asset_returns: DMatrix<f64>,
    pub portfolio_returns: DVector<f64>,
}

impl PortfolioPath {
    pub fn new(weights: DVector<f64>, asset_returns: DMatrix<f64>) -> Result<Self> {
        if asset_returns.ncols() != weights.len() {
            return Err(Error::Domain(format!(
                "{} weights for {} assets",
                weights.len(),
                asset_returns.ncols()
            )));
        }
        if asset_returns.nrows() < 2 {
            return Err(Error::InsufficientData(format!(
                "loss window needs at least 2 rows, got {}",
                asset_returns.nrows()
            )));
        }
        let portfolio_returns = &asset_returns * &weights;
        Ok(Self {
            weights,
            asset_returns,
            portfolio_returns,
        })
    }

    pub fn len(&self) -> usize {
        self.portfolio_returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.portfolio_returns.is_empty()
    }
}

/// Loss value with its gradient w.r.t. the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: DVector<f64>,
}

pub fn evaluate_loss(kind: LossKind, path: &PortfolioPath) -> Result<LossValue> {
    match kind {
        LossKind::Sharpe => sharpe_loss(path),
        LossKind::CumulativeReturn => cumulative_return_loss(path),
    }
}

/// `-mean / std` of the daily portfolio returns (sample std, no annualization).
pub fn sharpe_loss(path: &PortfolioPath) -> Result<LossValue> {
    let r = &path.portfolio_returns;
    let t = r.len() as f64;
    let mu = r.mean();
    let centered = r.map(|v| v - mu);
    let var = centered.norm_squared() / (t - 1.0);
    let s = var.sqrt();
    if !(s > MIN_STD) {
        return Err(Error::Degenerate(format!(
            "portfolio return std {s:e} too small for a Sharpe ratio"
        )));
    }
    let asset_means = DVector::from_iterator(
        path.asset_returns.ncols(),
        path.asset_returns.column_iter().map(|c| c.mean()),
    );
    // d(s^2)/dw = 2 / (T-1) * sum_t (r_t - mu) (R_t - Rbar); ds/dw = that / 2s.
    let ds: DVector<f64> = {
        let demeaned = DMatrix::from_fn(path.asset_returns.nrows(), path.asset_returns.ncols(), |i, j| {
            path.asset_returns[(i, j)] - asset_means[j]
        });
        demeaned.transpose() * &centered / ((t - 1.0) * s)
    };
    let grad = -(asset_means * s - ds * mu) / (s * s);
    Ok(LossValue { loss: -mu / s, grad })
}

/// `-prod_t (1 + r_t)`, accumulated in the log domain.
pub fn cumulative_return_loss(path: &PortfolioPath) -> Result<LossValue> {
    let r = &path.portfolio_returns;
    let mut log_growth = 0.0;
    for (step, &rt) in r.iter().enumerate() {
        let gross = 1.0 + rt;
        if !(gross > 0.0) {
            return Err(Error::Bankruptcy { step, gross });
        }
        log_growth += rt.ln_1p();
    }
    let loss = -log_growth.exp();
    let inv_gross = r.map(|v| 1.0 / (1.0 + v));
    let grad = path.asset_returns.transpose() * inv_gross * loss;
    Ok(LossValue { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn single(rets: &[f64]) -> PortfolioPath {
        PortfolioPath::new(dvector![1.0], DMatrix::from_column_slice(rets.len(), 1, rets)).unwrap()
    }

    #[test]
    fn sharpe_examples() {
        assert_eq!(sharpe_loss(&single(&[0.01, -0.01])).unwrap().loss, 0.0);
        let l = sharpe_loss(&single(&[0.02, 0.0, 0.01])).unwrap();
        assert!((l.loss + 1.0).abs() < 1e-12);
        assert!(matches!(sharpe_loss(&single(&[0.01, 0.01])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_return_loss(&single(&[0.0, 0.0, 0.0])).unwrap().loss, -1.0);
        let l = cumulative_return_loss(&single(&[0.1, 0.1])).unwrap();
        assert!((l.loss + 1.21).abs() < 1e-12);
        assert!(matches!(
            cumulative_return_loss(&single(&[0.05, -1.0])),
            Err(Error::Bankruptcy { step: 1, .. })
        ));
    }

    #[test]
    fn short_window_rejected() {
        assert!(PortfolioPath::new(dvector![1.0], DMatrix::from_element(1, 1, 0.01)).is_err());
    }

    #[test]
    fn loss_kind_parsing() {
        assert_eq!("sharpe".parse::<LossKind>().unwrap(), LossKind::Sharpe);
        assert_eq!(
            "cumulative_return".parse::<LossKind>().unwrap(),
            LossKind::CumulativeReturn
        );
        assert!("sortino".parse::<LossKind>().is_err());
        assert_eq!(
            serde_json::to_string(&LossKind::CumulativeReturn).unwrap(),
            "\"cumulative_return\""
        );
    }
}
