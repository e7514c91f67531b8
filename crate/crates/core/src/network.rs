//! Two-layer budget network: `logits = W2 leaky_relu(W1 x + b1) + b2`.
//!
//! Initialization draws every entry from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
//! with ChaCha8 (`rand_chacha` 0.9) seeded through `seed_from_u64`, in the
//! fixed order `w1` (row-major), `b1`, `w2` (row-major), `b2`. The same seed
//! gives bit-identical parameters on every platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::FeatureVector;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// h x n
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// n x h
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub seed: u64,
    pub alpha: f64,
}

impl NetworkParams {
    pub fn zeros(n: usize, h: usize) -> Self {
        Self {
            w1: DMatrix::zeros(h, n),
            b1: DVector::zeros(h),
            w2: DMatrix::zeros(n, h),
            b2: DVector::zeros(n),
            seed: 0,
            alpha: LEAKY_SLOPE,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.w2.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check(&self) -> Result<()> {
        let (h, n) = self.w1.shape();
        if self.b1.len() != h || self.w2.ncols() != h || self.b2.len() != self.w2.nrows() {
            return Err(Error::Domain(format!(
                "inconsistent network shapes: w1 {h}x{n}, b1 {}, w2 {}x{}, b2 {}",
                self.b1.len(),
                self.w2.nrows(),
                self.w2.ncols(),
                self.b2.len()
            )));
        }
        Ok(())
    }

    /// Parameters in snapshot order: w1 row-major, b1, w2 row-major, b2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        push_row_major(&mut out, &self.w1);
        out.extend(self.b1.iter());
        push_row_major(&mut out, &self.w2);
        out.extend(self.b2.iter());
        out
    }

    /// Inverse of [`flatten`](Self::flatten) for the same shapes.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Domain(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let (h, n) = self.w1.shape();
        let mut it = flat.iter().copied();
        let w1 = DMatrix::from_row_iterator(h, n, it.by_ref().take(h * n));
        let b1 = DVector::from_iterator(h, it.by_ref().take(h));
        let w2 = DMatrix::from_row_iterator(self.n_outputs(), h, it.by_ref().take(self.n_outputs() * h));
        let b2 = DVector::from_iterator(self.n_outputs(), it);
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            seed: self.seed,
            alpha: self.alpha,
        })
    }

    pub fn to_snapshot(&self) -> ParamSnapshot {
        ParamSnapshot {
            n: self.n_inputs(),
            hidden: self.hidden(),
            seed: self.seed,
            alpha: self.alpha,
            values: self.flatten(),
        }
    }

    pub fn from_snapshot(s: &ParamSnapshot) -> Result<Self> {
        let mut shell = Self::zeros(s.n, s.hidden);
        shell.seed = s.seed;
        shell.alpha = s.alpha;
        shell.with_flat(&s.values)
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in m.row_iter() {
        out.extend(r.iter());
    }
}

/// JSON-friendly parameter dump with a shape header. `serde_json` is built
/// with `float_roundtrip`, so values survive a write/read cycle bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub n: usize,
    pub hidden: usize,
    pub seed: u64,
    pub alpha: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    pub input: DVector<f64>,
    pub pre1: DVector<f64>,
    pub act1: DVector<f64>,
    pub logits: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl ParamGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        push_row_major(&mut out, &self.w1);
        out.extend(self.b1.iter());
        push_row_major(&mut out, &self.w2);
        out.extend(self.b2.iter());
        out
    }

    pub fn norm(&self) -> f64 {
        (self.w1.norm_squared() + self.b1.norm_squared() + self.w2.norm_squared() + self.b2.norm_squared()).sqrt()
    }
}

pub fn init_params(seed: u64, n: usize, h: usize) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1 = (1.0 / n as f64).sqrt();
    let a2 = (1.0 / h as f64).sqrt();
    let mut draw = |a: f64| rng.random_range(-a..a);
    let mut w1 = DMatrix::zeros(h, n);
    for r in 0..h {
        for c in 0..n {
            w1[(r, c)] = draw(a1);
        }
    }
    let b1 = DVector::from_fn(h, |_, _| draw(a1));
    let mut w2 = DMatrix::zeros(n, h);
    for r in 0..n {
        for c in 0..h {
            w2[(r, c)] = draw(a2);
        }
    }
    let b2 = DVector::from_fn(n, |_, _| draw(a2));
    NetworkParams {
        w1,
        b1,
        w2,
        b2,
        seed,
        alpha: LEAKY_SLOPE,
    }
}

pub fn leaky_relu(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        alpha * z
    }
}

/// Derivative used in the backward pass; `alpha` at exactly zero.
pub fn leaky_relu_grad(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        alpha
    }
}

pub fn forward(params: &NetworkParams, x: &FeatureVector) -> Result<(DVector<f64>, ForwardTape)> {
    params.check()?;
    if x.len() != params.n_inputs() {
        return Err(Error::Domain(format!(
            "feature length {} does not match network input {}",
            x.len(),
            params.n_inputs()
        )));
    }
    let pre1 = &params.w1 * &x.0 + &params.b1;
    let act1 = pre1.map(|z| leaky_relu(z, params.alpha));
    let logits = &params.w2 * &act1 + &params.b2;
    let tape = ForwardTape {
        input: x.0.clone(),
        pre1,
        act1,
        logits: logits.clone(),
    };
    Ok((logits, tape))
}

/// Reverse-mode gradients for a loss whose gradient w.r.t. the logits is
/// `dl_dlogits`. Returns parameter gradients and the input gradient.
pub fn backward(
    params: &NetworkParams,
    tape: &ForwardTape,
    dl_dlogits: &DVector<f64>,
) -> Result<(ParamGrads, DVector<f64>)> {
    params.check()?;
    if tape.input.len() != params.n_inputs()
        || tape.pre1.len() != params.hidden()
        || dl_dlogits.len() != params.n_outputs()
    {
        return Err(Error::Domain("forward tape does not match network parameters".into()));
    }
    let g_w2 = dl_dlogits * tape.act1.transpose();
    let g_b2 = dl_dlogits.clone();
    let d_act = params.w2.transpose() * dl_dlogits;
    let d_pre = d_act.zip_map(&tape.pre1, |g, z| g * leaky_relu_grad(z, params.alpha));
    let g_w1 = &d_pre * tape.input.transpose();
    let g_b1 = d_pre.clone();
    let d_x = params.w1.transpose() * &d_pre;
    Ok((
        ParamGrads {
            w1: g_w1,
            b1: g_b1,
            w2: g_w2,
            b2: g_b2,
        },
        d_x,
    ))
}
