//! Convex risk-budgeting layer.
//!
//! Weights come from the log-barrier problem
//!
//! ```text
//!   y* = argmin_{y > 0}  1/2 y^T Sigma y - sum_i b_i ln y_i,     w = y* / 1^T y*
//! ```
//!
//! whose stationarity condition `Sigma y = b / y` makes every asset's risk
//! share `w_i (Sigma w)_i / w^T Sigma w` equal to `b_i`. Implicit gradients
//! differentiate that condition: `H dy = diag(1/y) db` with
//! `H = Sigma + diag(b / y^2)`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::bounded_softmax::RiskBudgets;
use crate::error::{Error, Result};
use crate::market_data::CovarianceMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Infinity-norm bound on `Sigma y - b / y`.
    pub tol: f64,
    pub max_iter: usize,
    /// Record per-iteration residuals in the solution.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            trace: false,
        }
    }
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
/// Each step keeps `y >= STEP_FLOOR * y_current`.
const STEP_FLOOR: f64 = 0.1;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone)]
pub struct RbSolution {
    pub y_star: DVector<f64>,
    pub weights: DVector<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// `Sigma + diag(b / y*^2)` at the solution.
    pub hessian_cache: DMatrix<f64>,
    /// Residual after each iteration, when tracing was requested.
    pub residual_trace: Vec<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl RbSolution {
    /// Writes the residual trace as `iteration,residual` CSV.
    pub fn write_residual_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,residual")?;
        for (i, r) in self.residual_trace.iter().enumerate() {
            writeln!(out, "{i},{r:e}")?;
        }
        Ok(())
    }

    /// Solves `H z = rhs` with the cached factorization.
    pub fn solve_hessian(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskContributionReport {
    pub total_vol: f64,
    pub contributions: DVector<f64>,
    pub shares: DVector<f64>,
}

fn barrier_value(sigma: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> f64 {
    0.5 * y.dot(&(sigma * y)) - b.iter().zip(y.iter()).map(|(bi, yi)| bi * yi.ln()).sum::<f64>()
}

fn gradient(sigma: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    sigma * y - b.component_div(y)
}

fn hessian(sigma: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let mut h = sigma.clone();
    for i in 0..y.len() {
        h[(i, i)] += b[i] / (y[i] * y[i]);
    }
    h
}

/// Damped Newton with Armijo backtracking, started from `sqrt(b_i / Sigma_ii)`.
pub fn solve_risk_budgeting(sigma: &CovarianceMatrix, b: &RiskBudgets, opts: &SolverOptions) -> Result<RbSolution> {
    let s = &sigma.sigma;
    let bv = b.as_vector();
    let n = s.nrows();
    if bv.len() != n {
        return Err(Error::Domain(format!(
            "budget length {} does not match covariance size {n}",
            bv.len()
        )));
    }
    if bv.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("risk budgets must be strictly positive".into()));
    }
    if (0..n).any(|i| !(s[(i, i)] > 0.0)) {
        return Err(Error::Domain("covariance has a non-positive diagonal".into()));
    }

    let mut y = DVector::from_fn(n, |i, _| (bv[i] / s[(i, i)]).sqrt());
    let mut g = gradient(s, bv, &y);
    let mut res = g.amax();
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(res);
    }
    let mut iterations = 0;

    while res > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::Convergence {
                iterations,
                residual: res,
            });
        }
        let h = hessian(s, bv, &y);
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::Domain("Newton system is not positive definite".into()))?;
        let d = -chol.solve(&g);

        let mut alpha: f64 = 1.0;
        for i in 0..n {
            if d[i] < 0.0 {
                alpha = alpha.min((1.0 - STEP_FLOOR) * y[i] / -d[i]);
            }
        }

        let f0 = barrier_value(s, bv, &y);
        let slope = g.dot(&d);
        // Rounding slack so a near-optimal full step is not rejected on noise.
        let slack = 8.0 * f64::EPSILON * f0.abs();
        let mut accepted = None;
        let mut trial_alpha = alpha;
        for _ in 0..MAX_BACKTRACKS {
            let cand = &y + &d * trial_alpha;
            if cand.iter().all(|v| *v > 0.0) {
                let f1 = barrier_value(s, bv, &cand);
                if f1 <= f0 + ARMIJO_C1 * trial_alpha * slope + slack {
                    accepted = Some(cand);
                    break;
                }
            }
            trial_alpha *= BACKTRACK;
        }
        // Near the optimum the decrease in f drops below rounding; fall back to
        // accepting the capped step when it shrinks the stationarity residual.
        let next = match accepted {
            Some(c) => c,
            None => {
                let cand = &y + &d * alpha;
                let ok = cand.iter().all(|v| *v > 0.0) && gradient(s, bv, &cand).amax() < res;
                if !ok {
                    return Err(Error::Convergence {
                        iterations,
                        residual: res,
                    });
                }
                cand
            }
        };
        y = next;
        g = gradient(s, bv, &y);
        res = g.amax();
        iterations += 1;
        if opts.trace {
            trace.push(res);
        }
    }

    let hessian_cache = hessian(s, bv, &y);
    let factor = hessian_cache
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Hessian at the solution is singular".into()))?;
    let total = y.sum();
    let weights = &y / total;
    Ok(RbSolution {
        y_star: y,
        weights,
        iterations,
        grad_norm: res,
        hessian_cache,
        residual_trace: trace,
        factor,
    })
}

pub fn risk_contributions(sigma: &CovarianceMatrix, w: &DVector<f64>) -> Result<RiskContributionReport> {
    let s = &sigma.sigma;
    if w.len() != s.nrows() {
        return Err(Error::Domain("weight length does not match covariance".into()));
    }
    let sw = s * w;
    let var = w.dot(&sw);
    if !(var > 0.0) {
        return Err(Error::Degenerate(format!("portfolio variance {var} is not positive")));
    }
    let total_vol = var.sqrt();
    let contributions = w.component_mul(&sw) / total_vol;
    let shares = &contributions / total_vol;
    Ok(RiskContributionReport {
        total_vol,
        contributions,
        shares,
    })
}

/// `U(w; b, Sigma) = sum_i (w_i (Sigma w)_i - b_i w^T Sigma w)^2`.
pub fn plugin_objective(sigma: &CovarianceMatrix, b: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    let s = &sigma.sigma;
    if w.len() != s.nrows() || b.len() != s.nrows() {
        return Err(Error::Domain("plug-in objective shape mismatch".into()));
    }
    let sw = s * w;
    let var = w.dot(&sw);
    Ok((0..w.len())
        .map(|i| {
            let r = w[i] * sw[i] - b[i] * var;
            r * r
        })
        .sum())
}

/// Full `dy*/db`, one solve per column against the cached factorization.
pub fn rb_gradient_wrt_budgets(sol: &RbSolution) -> DMatrix<f64> {
    let n = sol.y_star.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut rhs = DVector::zeros(n);
        rhs[j] = 1.0 / sol.y_star[j];
        jac.set_column(j, &sol.solve_hessian(&rhs));
    }
    jac
}

/// `(dy*/db)^T g = diag(1/y*) H^{-1} g`.
pub fn rb_budget_vjp(sol: &RbSolution, g: &DVector<f64>) -> DVector<f64> {
    sol.solve_hessian(g).component_div(&sol.y_star)
}

/// `dw/dy = (I - w 1^T) / 1^T y`.
pub fn normalization_jacobian(y: &DVector<f64>) -> Result<DMatrix<f64>> {
    if y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("normalization needs y > 0".into()));
    }
    let n = y.len();
    let total = y.sum();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (delta - y[i] / total) / total
    }))
}

/// `(dw/dy)^T g = (g - (w . g) 1) / 1^T y`.
pub fn normalization_vjp(y: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let total = y.sum();
    let wg = y.dot(g) / total;
    g.map(|gi| (gi - wg) / total)
}
