//! Lower-bounded softmax.
//!
//! The map `x -> b` is the unique minimizer of
//!
//! ```text
//!   sum_i b_i ln b_i - x^T b    s.t.  1^T b = 1,  b >= u
//! ```
//!
//! Coordinates split into an active set `A` that follows the softmax
//! restricted to `A`, rescaled to the mass left after the floor, and an
//! inactive set pinned at `u`:
//!
//! ```text
//!   b_i = exp(x_i) / sum_{j in A} exp(x_j) * (1 - (n - k) u)    i in A
//!   b_i = u                                                     otherwise
//! ```
//!
//! `A` starts as `{i : softmax_i(x) >= u}` and is refined by demoting any
//! member whose rescaled value drops below `u`. Every demotion shrinks the
//! per-coordinate scale, so previously inactive coordinates stay inactive and
//! the fixed point satisfies the KKT conditions of the problem above.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default floor `1 / (10 n)`.
pub fn default_lower_bound(n: usize) -> f64 {
    1.0 / (10.0 * n as f64)
}

/// Strictly positive simplex vector with a known floor.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskBudgets {
    b: DVector<f64>,
    lower_bound: f64,
}

impl RiskBudgets {
    /// Uniform budgets `1/n`.
    pub fn uniform(n: usize) -> Self {
        Self {
            b: DVector::from_element(n, 1.0 / n as f64),
            lower_bound: 1.0 / n as f64,
        }
    }

    /// Validates an explicit budget vector: positive, summing to one.
    pub fn from_vec(b: DVector<f64>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::Domain("empty budget vector".into()));
        }
        if b.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Domain("risk budgets must be strictly positive".into()));
        }
        let s = b.sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("risk budgets sum to {s}, expected 1")));
        }
        let lower_bound = b.min();
        Ok(Self { b, lower_bound })
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.b
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

/// Converged active set, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub active: Vec<bool>,
    pub k: usize,
    /// `1 - (n - k) u`, the mass shared by the active coordinates.
    pub scale: f64,
    /// Softmax restricted to `A` (zero outside `A`); sums to one over `A`.
    pub restricted: DVector<f64>,
    /// Number of refinement passes after the initial classification.
    pub refinements: usize,
}

impl ActiveSet {
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i)
    }

    /// `db/dx`: `scale * s_i (delta_ij - s_j)` on `A x A`, zero elsewhere.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.active.len();
        let s = &self.restricted;
        DMatrix::from_fn(n, n, |i, j| {
            if !(self.active[i] && self.active[j]) {
                return 0.0;
            }
            let delta = if i == j { 1.0 } else { 0.0 };
            self.scale * s[i] * (delta - s[j])
        })
    }

    /// `J^T g` without forming `J`. `J` is symmetric.
    pub fn vjp(&self, g: &DVector<f64>) -> DVector<f64> {
        let s = &self.restricted;
        let dot: f64 = self.indices().map(|i| s[i] * g[i]).sum();
        DVector::from_fn(self.active.len(), |j, _| {
            if self.active[j] {
                self.scale * s[j] * (g[j] - dot)
            } else {
                0.0
            }
        })
    }
}

fn check_inputs(x: &DVector<f64>, u: f64) -> Result<()> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Domain(format!("bounded softmax needs n >= 2, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite logit".into()));
    }
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::Domain(format!("lower bound must be positive, got {u}")));
    }
    if u > (1.0 / n as f64) * (1.0 + 1e-12) {
        return Err(Error::Infeasible { u, n });
    }
    Ok(())
}

/// `exp(x - max x)`.
fn shifted_exp(x: &DVector<f64>) -> DVector<f64> {
    let m = x.max();
    x.map(|v| (v - m).exp())
}

/// Standard softmax, max-shifted.
pub fn softmax(x: &DVector<f64>) -> DVector<f64> {
    let e = shifted_exp(x);
    let s = e.sum();
    e.map(|v| v / s)
}

pub fn bounded_softmax(x: &DVector<f64>, u: f64) -> Result<(RiskBudgets, ActiveSet)> {
    check_inputs(x, u)?;
    let n = x.len();
    let e = shifted_exp(x);
    let total = e.sum();
    let argmax = x.argmax().0;

    let mut active: Vec<bool> = e.iter().map(|&v| v / total >= u).collect();
    let mut refinements = 0;
    let (k, scale, restricted) = loop {
        let k = active.iter().filter(|a| **a).count();
        let scale = 1.0 - (n - k) as f64 * u;
        let mass: f64 = e.iter().zip(&active).filter(|(_, a)| **a).map(|(v, _)| *v).sum();
        let restricted = DVector::from_fn(n, |i, _| if active[i] { e[i] / mass } else { 0.0 });
        let mut demoted = false;
        for i in 0..n {
            if active[i] && i != argmax && restricted[i] * scale < u {
                active[i] = false;
                demoted = true;
            }
        }
        if !demoted {
            break (k, scale, restricted);
        }
        refinements += 1;
    };

    let b = DVector::from_fn(n, |i, _| if active[i] { restricted[i] * scale } else { u });
    Ok((
        RiskBudgets { b, lower_bound: u },
        ActiveSet {
            active,
            k,
            scale,
            restricted,
            refinements,
        },
    ))
}

pub fn bounded_softmax_jacobian(x: &DVector<f64>, u: f64) -> Result<DMatrix<f64>> {
    let (_, set) = bounded_softmax(x, u)?;
    Ok(set.jacobian())
}

/// Entropy-regularized objective `sum b ln b - x^T b`.
pub fn objective(x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    b.iter().map(|&v| v * v.ln()).sum::<f64>() - x.dot(b)
}

/// Reference solver for the bounded problem, independent of the active-set
/// closed form: bisection on the multiplier of `1^T b = 1`.
///
/// For a multiplier `lambda` the Lagrangian minimizer over `b >= u` is
/// `b_i = max(u, exp(x_i - max x + lambda))`, whose sum is nondecreasing in
/// `lambda`; `[ln u, 0]` brackets the root. The returned point is feasible and
/// its objective is within `tol` of the dual bound.
pub fn bounded_softmax_oracle(x: &DVector<f64>, u: f64, tol: f64) -> Result<RiskBudgets> {
    const MAX_ITER: usize = 400;
    check_inputs(x, u)?;
    let m = x.max();
    let z = x.map(|v| v - m);
    let at = |lambda: f64| z.map(|v| (v + lambda).exp().max(u));

    let (mut lo, mut hi) = (u.ln(), 0.0f64);
    let mut iter = 0;
    while iter < MAX_ITER && hi - lo > f64::EPSILON * (1.0 + lo.abs()) {
        let mid = 0.5 * (lo + hi);
        if at(mid).sum() < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    let lambda = 0.5 * (lo + hi);
    let mut b = at(lambda);
    // Put the residual mass on the largest coordinate so 1^T b = 1 exactly-ish.
    let top = b.argmax().0;
    b[top] += 1.0 - b.sum();
    if b[top] < u {
        return Err(Error::Numerical(
            "oracle residual pushed the top coordinate below the floor".into(),
        ));
    }

    // Dual bound: L(b(lambda'), lambda') with lambda' the multiplier in
    // unshifted coordinates.
    let lambda_dual = lambda - m + 1.0;
    let b_dual = at(lambda);
    let dual = objective(x, &b_dual) - lambda_dual * (b_dual.sum() - 1.0);
    let gap = objective(x, &b) - dual;
    if gap > tol || iter >= MAX_ITER {
        return Err(Error::Convergence {
            iterations: iter,
            residual: gap,
        });
    }
    Ok(RiskBudgets { b, lower_bound: u })
}
