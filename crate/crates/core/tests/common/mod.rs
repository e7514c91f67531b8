#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rb_e2e::{CovarianceMatrix, RiskBudgets};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `A A^T + 0.1 I` with standard-normal `A`, times `scale`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CovarianceMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    let s = (&a * a.transpose() + DMatrix::identity(n, n) * 0.1) * scale;
    CovarianceMatrix::from_matrix(s).expect("random instance is PD")
}

/// Interior budgets from normalized log-normal draws.
pub fn random_budgets(rng: &mut ChaCha8Rng, n: usize) -> RiskBudgets {
    let raw = DVector::from_fn(n, |_, _| normal(rng).exp());
    let total = raw.sum();
    RiskBudgets::from_vec(raw / total).expect("interior budgets")
}

/// Logits on the 1/256 grid in [-8, 8]; every shift by an integer is exact.
pub fn grid_logits(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-2048i32..=2048) as f64 / 256.0)
}

/// `u` in `(0, 1/n]`.
pub fn random_floor(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    (1.0 - rng.random::<f64>()) / n as f64
}

pub fn simple_returns(rng: &mut ChaCha8Rng, t: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, n, |_, _| 0.0005 + 0.01 * normal(rng))
}

/// `|a - b|_inf / |b|_inf`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale
}

pub mod fd {
    use super::*;
    use rb_e2e::bounded_softmax::bounded_softmax;
    use rb_e2e::losses::evaluate_loss;
    use rb_e2e::network::{self, init_params};
    use rb_e2e::trainer::{e2e_backward, e2e_forward};
    use rb_e2e::{FeatureVector, LossKind, NetworkParams, PortfolioPath, SolverOptions};

    pub const STEP: f64 = 1e-6;

    pub fn solver() -> SolverOptions {
        SolverOptions {
            tol: 1e-13,
            ..SolverOptions::default()
        }
    }

    /// Central differences of `f` at `theta`.
    pub fn central(theta: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut p = theta.to_vec();
        (0..theta.len())
            .map(|k| {
                p[k] = theta[k] + STEP;
                let up = f(&p);
                p[k] = theta[k] - STEP;
                let down = f(&p);
                p[k] = theta[k];
                (up - down) / (2.0 * STEP)
            })
            .collect()
    }

    /// Random network whose hidden pre-activations stay clear of the kink.
    pub fn network_case(rng: &mut ChaCha8Rng, n: usize, h: usize) -> (NetworkParams, FeatureVector) {
        loop {
            let params = init_params(rng.random(), n, h);
            let x = FeatureVector(DVector::from_fn(n, |_, _| normal(rng)));
            let (_, tape) = network::forward(&params, &x).unwrap();
            if tape.pre1.iter().all(|z| z.abs() > 1e-3) {
                return (params, x);
            }
        }
    }

    /// Analytic and finite-difference gradients of `c . logits` w.r.t. the flat parameters.
    pub fn network_gradients(params: &NetworkParams, x: &FeatureVector, c: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let (_, tape) = network::forward(params, x).unwrap();
        let (g, _) = network::backward(params, &tape, c).unwrap();
        let fd = central(&params.flatten(), |p| {
            network::forward(&params.with_flat(p).unwrap(), x).unwrap().0.dot(c)
        });
        (g.flatten(), fd)
    }

    pub fn loss_gradients(kind: LossKind, w: &DVector<f64>, r: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        let path = PortfolioPath::new(w.clone(), r.clone()).unwrap();
        let analytic = evaluate_loss(kind, &path).unwrap().grad;
        let fd = central(w.as_slice(), |wp| {
            evaluate_loss(
                kind,
                &PortfolioPath::new(DVector::from_column_slice(wp), r.clone()).unwrap(),
            )
            .unwrap()
            .loss
        });
        (analytic.iter().copied().collect(), fd)
    }

    pub struct ChainCase {
        pub params: NetworkParams,
        pub x: FeatureVector,
        pub sigma: CovarianceMatrix,
        pub returns: DMatrix<f64>,
        pub kind: LossKind,
        pub u: f64,
    }

    pub fn chain_case(rng: &mut ChaCha8Rng, n: usize, h: usize, kind: LossKind) -> ChainCase {
        let (params, x) = network_case(rng, n, h);
        ChainCase {
            params,
            x,
            sigma: random_pd(rng, n, 1e-4),
            returns: simple_returns(rng, 60, n),
            kind,
            u: 1.0 / (10.0 * n as f64),
        }
    }

    pub fn chain_loss(case: &ChainCase, params: &NetworkParams) -> f64 {
        let (w, _) = e2e_forward(params, &case.x, &case.sigma, case.u, &solver()).unwrap();
        evaluate_loss(case.kind, &PortfolioPath::new(w, case.returns.clone()).unwrap())
            .unwrap()
            .loss
    }

    /// `None` when a perturbation moves the bounded-softmax active set or a
    /// hidden unit across its kink.
    pub fn chain_gradients(case: &ChainCase) -> Option<(Vec<f64>, Vec<f64>)> {
        let (w, tape) = e2e_forward(&case.params, &case.x, &case.sigma, case.u, &solver()).unwrap();
        let lv = evaluate_loss(case.kind, &PortfolioPath::new(w, case.returns.clone()).unwrap()).unwrap();
        let analytic = e2e_backward(&case.params, &tape, &lv.grad).unwrap().flatten();
        let theta = case.params.flatten();
        let mut stable = true;
        let fd = central(&theta, |p| {
            let params = case.params.with_flat(p).unwrap();
            let (logits, net) = network::forward(&params, &case.x).unwrap();
            let (_, act) = bounded_softmax(&logits, case.u).unwrap();
            let kinks = net
                .pre1
                .iter()
                .zip(tape.network.pre1.iter())
                .any(|(a, b)| a.signum() != b.signum());
            if act.active != tape.active_set.active || kinks {
                stable = false;
            }
            chain_loss(case, &params)
        });
        stable.then_some((analytic, fd))
    }
}
