//! Deterministic factor-model return panels for tests, benchmarks and the
//! bundled acceptance fixture.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::market_data::{PricePanel, ReturnsPanel};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub days: usize,
    pub factors: usize,
    pub seed: u64,
    pub start: NaiveDate,
}

impl Default for SyntheticSpec {
    /// Seven assets, 2000 trading days, three factors, seed 7.
    fn default() -> Self {
        Self {
            n_assets: 7,
            days: 2000,
            factors: 3,
            seed: 7,
            start: NaiveDate::from_ymd_opt(2011, 1, 3).expect("valid date"),
        }
    }
}

/// Weekday calendar of `count` dates starting at `start` (inclusive if a weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Log returns `r_t = mu + L f_t + s e_t` with Gaussian factors and noise.
///
/// Asset drifts, factor loadings and idiosyncratic vols are themselves drawn
/// from the seeded generator, so one seed fixes the whole panel.
pub fn factor_panel(spec: &SyntheticSpec) -> ReturnsPanel {
    let n = spec.n_assets;
    let k = spec.factors.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    // Per-asset scale spreads vols over roughly 0.3% .. 1.6% daily.
    let scale: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.6)).collect();
    let loadings = DMatrix::from_fn(n, k, |i, _| 0.006 * scale[i] * normal(&mut rng));
    let idio: DVector<f64> = DVector::from_fn(n, |i, _| 0.004 * scale[i] * rng.random_range(0.5..1.5));
    let drift: DVector<f64> = DVector::from_fn(n, |i, _| scale[i] * rng.random_range(-1e-4..4e-4));

    let dates = business_days(spec.start, spec.days + 1);
    let mut returns = DMatrix::zeros(spec.days, n);
    for t in 0..spec.days {
        let f = DVector::from_fn(k, |_, _| normal(&mut rng));
        let common = &loadings * f;
        for i in 0..n {
            returns[(t, i)] = drift[i] + common[i] + idio[i] * normal(&mut rng);
        }
    }
    let tickers = (0..n).map(|i| format!("SYN{i}")).collect();
    ReturnsPanel::new(dates[0], dates[1..].to_vec(), tickers, returns).expect("synthetic panel is well-formed")
}

/// Prices `100 * exp(cumsum(r))` for the same panel, starting at 100 on the
/// base date.
pub fn factor_prices(spec: &SyntheticSpec) -> PricePanel {
    let r = factor_panel(spec);
    let n = r.n_assets();
    let t = r.len();
    let mut prices = DMatrix::zeros(t + 1, n);
    for i in 0..n {
        let mut log_p = 100f64.ln();
        prices[(0, i)] = 100.0;
        for s in 0..t {
            log_p += r.returns[(s, i)];
            prices[(s + 1, i)] = log_p.exp();
        }
    }
    let mut dates = vec![r.base_date];
    dates.extend(r.dates.iter().copied());
    PricePanel::new(dates, r.tickers.clone(), prices).expect("synthetic prices are positive")
}
