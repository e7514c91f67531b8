//! Price ingestion, log returns, period splits, rolling covariance and
//! network input features.
//!
//! Everything here is immutable after construction. Row `t` of a
//! [`ReturnsPanel`] holds the log return realised on `dates[t]`, i.e. between
//! the previous trading date and `dates[t]`. The price date preceding the
//! first row is kept as `base_date` so cumulative paths can start at 1.0 on
//! a real calendar date.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter schedule for covariance repair: start, growth factor, cap.
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_GROWTH: f64 = 10.0;
pub const JITTER_MAX: f64 = 1e-4;

pub const DEFAULT_FEATURE_LOOKBACK: usize = 60;
pub const DEFAULT_COV_WINDOW: usize = 120;

const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// T x n adjusted closes.
    pub prices: DMatrix<f64>,
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.nrows() != dates.len() || prices.ncols() != tickers.len() {
            return Err(Error::Schema(format!(
                "price matrix is {}x{} but panel has {} dates and {} tickers",
                prices.nrows(),
                prices.ncols(),
                dates.len(),
                tickers.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!("dates not strictly increasing at {}", w[1])));
        }
        for t in 0..prices.nrows() {
            for i in 0..prices.ncols() {
                let p = prices[(t, i)];
                if !(p.is_finite() && p > 0.0) {
                    return Err(Error::Data(format!(
                        "non-positive price {p} on {} for {}",
                        dates[t], tickers[i]
                    )));
                }
            }
        }
        Ok(Self { dates, tickers, prices })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    /// Price date preceding `dates[0]`.
    pub base_date: NaiveDate,
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// (T-1) x n daily log returns.
    pub returns: DMatrix<f64>,
}

impl ReturnsPanel {
    pub fn new(
        base_date: NaiveDate,
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        returns: DMatrix<f64>,
    ) -> Result<Self> {
        if returns.nrows() != dates.len() || returns.ncols() != tickers.len() {
            return Err(Error::Schema(format!(
                "returns matrix is {}x{} but panel has {} dates and {} tickers",
                returns.nrows(),
                returns.ncols(),
                dates.len(),
                tickers.len()
            )));
        }
        if dates.first().is_some_and(|d| *d <= base_date) || dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("return dates not strictly increasing".into()));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::Data("non-finite log return".into()));
        }
        Ok(Self {
            base_date,
            dates,
            tickers,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Date of the trading day before row `idx` (the base date for row 0).
    pub fn date_before(&self, idx: usize) -> NaiveDate {
        if idx == 0 {
            self.base_date
        } else {
            self.dates[idx - 1]
        }
    }

    /// Row indices whose dates fall in `range` (inclusive on both ends).
    pub fn index_range(&self, range: &DateRange) -> Range<usize> {
        let lo = self.dates.partition_point(|d| *d < range.start);
        let hi = self.dates.partition_point(|d| *d <= range.end);
        lo..hi.max(lo)
    }

    /// Index of the row dated exactly `date`.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Copy of the rows in `rows`.
    pub fn slice(&self, rows: Range<usize>) -> ReturnsPanel {
        let base_date = self.date_before(rows.start);
        let returns = self.returns.rows(rows.start, rows.len()).into_owned();
        ReturnsPanel {
            base_date,
            dates: self.dates[rows].to_vec(),
            tickers: self.tickers.clone(),
            returns,
        }
    }

    /// Simple returns `exp(r) - 1` for the rows in `rows`.
    pub fn simple_returns(&self, rows: Range<usize>) -> DMatrix<f64> {
        self.returns.rows(rows.start, rows.len()).map(|r| r.exp_m1())
    }
}

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::Config(format!("date range {start}..{end} is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

impl std::fmt::Display for DateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSplit {
    pub train: DateRange,
    pub validation: DateRange,
    pub evaluation: DateRange,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

impl PeriodSplit {
    /// Training 2011-2014, validation 2015-2016, evaluation 2017-2021.
    pub fn etf_default() -> Self {
        Self {
            train: DateRange {
                start: ymd(2011, 1, 1),
                end: ymd(2014, 12, 31),
            },
            validation: DateRange {
                start: ymd(2015, 1, 1),
                end: ymd(2016, 12, 31),
            },
            evaluation: DateRange {
                start: ymd(2017, 1, 1),
                end: ymd(2021, 12, 31),
            },
        }
    }

    /// Splits the dates of `returns` by row-count fractions (train, validation);
    /// the remainder is evaluation.
    pub fn by_fraction(returns: &ReturnsPanel, train: f64, validation: f64) -> Result<Self> {
        let t = returns.len();
        let n_train = (t as f64 * train).round() as usize;
        let n_val = (t as f64 * validation).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= t {
            return Err(Error::Config(format!(
                "fractions ({train}, {validation}) leave an empty partition of {t} rows"
            )));
        }
        let d = &returns.dates;
        Ok(Self {
            train: DateRange {
                start: d[0],
                end: d[n_train - 1],
            },
            validation: DateRange {
                start: d[n_train],
                end: d[n_train + n_val - 1],
            },
            evaluation: DateRange {
                start: d[n_train + n_val],
                end: d[t - 1],
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        for r in [&self.train, &self.validation, &self.evaluation] {
            if r.start > r.end {
                return Err(Error::Config(format!("reversed range {r}")));
            }
        }
        if self.train.end >= self.validation.start || self.validation.end >= self.evaluation.start {
            return Err(Error::Config(
                "train, validation and evaluation ranges must be disjoint and in order".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SplitViews {
    pub train: ReturnsPanel,
    pub validation: ReturnsPanel,
    pub evaluation: ReturnsPanel,
}

#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    pub sigma: DMatrix<f64>,
    pub window_end: Option<NaiveDate>,
    pub window_length: usize,
    /// Diagonal jitter that was added to reach positive definiteness.
    pub jitter: f64,
}

impl CovarianceMatrix {
    /// Wraps an explicit matrix; it must be symmetric and positive definite.
    pub fn from_matrix(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() || sigma.nrows() == 0 {
            return Err(Error::Domain("covariance must be a non-empty square matrix".into()));
        }
        let n = sigma.nrows();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Domain(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariance has non-finite entries".into()));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(Error::Domain("covariance is not positive definite".into()));
        }
        Ok(Self {
            sigma,
            window_end: None,
            window_length: 0,
            jitter: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    /// Copy scaled by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            sigma: &self.sigma * c,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub DVector<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reads a `date,<TICKER>,...` CSV of adjusted closes.
///
/// Rows are sorted by date, empty cells are forward-filled from the previous
/// row, and leading rows that still have a missing cell are dropped. An empty
/// `tickers` selects every column in file order.
pub fn load_price_csv(path: impl AsRef<Path>, tickers: &[String]) -> Result<PricePanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_price_csv(file, tickers)
}

pub fn read_price_csv(reader: impl std::io::Read, tickers: &[String]) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    if !header.get(0).is_some_and(|h| h.eq_ignore_ascii_case("date")) {
        return Err(Error::Schema("first column must be `date`".into()));
    }
    let selected: Vec<String> = if tickers.is_empty() {
        header.iter().skip(1).map(str::to_string).collect()
    } else {
        tickers.to_vec()
    };
    if selected.is_empty() {
        return Err(Error::Schema("no ticker columns".into()));
    }
    let mut cols = Vec::with_capacity(selected.len());
    for t in &selected {
        let pos = header
            .iter()
            .position(|h| h == t)
            .ok_or_else(|| Error::Schema(format!("ticker column `{t}` not found")))?;
        cols.push(pos);
    }

    let mut rows: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("malformed csv record {}: {e}", line + 2)))?;
        let raw_date = rec.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("bad date `{raw_date}` on line {}: {e}", line + 2)))?;
        let mut vals = Vec::with_capacity(cols.len());
        for (&c, t) in cols.iter().zip(&selected) {
            let cell = rec.get(c).unwrap_or_default();
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("null") {
                vals.push(None);
                continue;
            }
            let p: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("unparsable price `{cell}` on {date} for {t}")))?;
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Data(format!("non-positive price {p} on {date} for {t}")));
            }
            vals.push(Some(p));
        }
        if rows.insert(date, vals).is_some() {
            return Err(Error::Data(format!("duplicate date {date}")));
        }
    }

    let n = selected.len();
    let mut last: Vec<Option<f64>> = vec![None; n];
    let mut dates = Vec::with_capacity(rows.len());
    let mut flat = Vec::with_capacity(rows.len() * n);
    for (date, vals) in rows {
        for (slot, v) in last.iter_mut().zip(vals) {
            if v.is_some() {
                *slot = v;
            }
        }
        if last.iter().all(Option::is_some) {
            dates.push(date);
            flat.extend(last.iter().map(|v| v.unwrap()));
        }
    }
    let prices = DMatrix::from_row_slice(dates.len(), n, &flat);
    PricePanel::new(dates, selected, prices)
}

/// Writes a price panel in the same CSV layout `load_price_csv` reads.
pub fn write_price_csv(panel: &PricePanel, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    let mut header = vec!["date".to_string()];
    header.extend(panel.tickers.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (t, d) in panel.dates.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend((0..panel.n_assets()).map(|i| format!("{}", panel.prices[(t, i)])));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn compute_log_returns(panel: &PricePanel) -> Result<ReturnsPanel> {
    let t = panel.len();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 price rows for returns, got {t}"
        )));
    }
    let n = panel.n_assets();
    let returns = DMatrix::from_fn(t - 1, n, |r, i| (panel.prices[(r + 1, i)] / panel.prices[(r, i)]).ln());
    ReturnsPanel::new(
        panel.dates[0],
        panel.dates[1..].to_vec(),
        panel.tickers.clone(),
        returns,
    )
}

pub fn split_periods(returns: &ReturnsPanel, split: &PeriodSplit) -> Result<SplitViews> {
    split.validate()?;
    let view = |name: &str, range: &DateRange| {
        let rows = returns.index_range(range);
        if rows.is_empty() {
            return Err(Error::Config(format!("{name} range {range} selects no rows")));
        }
        Ok(returns.slice(rows))
    };
    Ok(SplitViews {
        train: view("train", &split.train)?,
        validation: view("validation", &split.validation)?,
        evaluation: view("evaluation", &split.evaluation)?,
    })
}

/// Sample covariance over the `window_length` rows ending at `window_end`
/// (inclusive).
pub fn sample_covariance(
    returns: &ReturnsPanel,
    window_end: NaiveDate,
    window_length: usize,
) -> Result<CovarianceMatrix> {
    let end = returns
        .index_of(window_end)
        .ok_or_else(|| Error::InsufficientData(format!("no return row dated {window_end}")))?;
    sample_covariance_before(returns, end + 1, window_length)
}

/// Sample covariance over rows `[end - window_length, end)`.
pub fn sample_covariance_before(returns: &ReturnsPanel, end: usize, window_length: usize) -> Result<CovarianceMatrix> {
    let n = returns.n_assets();
    if window_length < n + 1 {
        return Err(Error::InsufficientData(format!(
            "covariance window {window_length} shorter than n + 1 = {}",
            n + 1
        )));
    }
    if end > returns.len() || end < window_length {
        return Err(Error::InsufficientData(format!(
            "covariance window of {window_length} rows ending at row {end} exceeds available history"
        )));
    }
    let start = end - window_length;
    let window = returns.returns.rows(start, window_length);
    let means: Vec<f64> = (0..n).map(|i| window.column(i).mean()).collect();
    let denom = (window_length - 1) as f64;
    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for t in 0..window_length {
                acc += (window[(t, i)] - means[i]) * (window[(t, j)] - means[j]);
            }
            let c = acc / denom;
            sigma[(i, j)] = c;
            sigma[(j, i)] = c;
        }
    }
    let jitter = repair_positive_definite(&mut sigma)?;
    Ok(CovarianceMatrix {
        sigma,
        window_end: Some(returns.dates[end - 1]),
        window_length,
        jitter,
    })
}

/// Adds escalating diagonal jitter until `sigma` is numerically positive
/// definite. Returns the jitter applied (0 when none was needed).
pub fn repair_positive_definite(sigma: &mut DMatrix<f64>) -> Result<f64> {
    if is_numerically_pd(sigma) {
        return Ok(0.0);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut candidate = sigma.clone();
        for i in 0..candidate.nrows() {
            candidate[(i, i)] += jitter;
        }
        if is_numerically_pd(&candidate) {
            *sigma = candidate;
            return Ok(jitter);
        }
        jitter *= JITTER_GROWTH;
    }
    Err(Error::Numerical(format!(
        "covariance not positive definite even with jitter {JITTER_MAX:e}"
    )))
}

/// Smallest eigenvalue must clear rounding noise relative to the largest.
fn is_numerically_pd(sigma: &DMatrix<f64>) -> bool {
    let n = sigma.nrows();
    let eig = SymmetricEigen::new(sigma.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let floor = max.abs() * n as f64 * f64::EPSILON;
    min > floor && sigma.clone().cholesky().is_some()
}

/// Standardized trailing volatilities over the `lookback` rows ending at
/// `as_of` (inclusive).
pub fn trailing_features(returns: &ReturnsPanel, as_of: NaiveDate, lookback: usize) -> Result<FeatureVector> {
    let end = returns
        .index_of(as_of)
        .ok_or_else(|| Error::InsufficientData(format!("no return row dated {as_of}")))?;
    trailing_features_before(returns, end + 1, lookback)
}

/// Standardized trailing volatilities over rows `[end - lookback, end)`.
///
/// Per-asset volatility is the sample standard deviation (T-1 denominator);
/// the cross-sectional standardization also uses the n-1 denominator. When the
/// cross-sectional deviation is below 1e-12 the result is all zeros.
pub fn trailing_features_before(returns: &ReturnsPanel, end: usize, lookback: usize) -> Result<FeatureVector> {
    if lookback < 2 {
        return Err(Error::Config(format!("feature lookback must be >= 2, got {lookback}")));
    }
    if end > returns.len() || end < lookback {
        return Err(Error::InsufficientData(format!(
            "feature lookback of {lookback} rows ending at row {end} exceeds available history"
        )));
    }
    let window = returns.returns.rows(end - lookback, lookback);
    let vols = DVector::from_iterator(
        returns.n_assets(),
        window.column_iter().map(|c| sample_std(c.iter().copied())),
    );
    Ok(FeatureVector(standardize(&vols)))
}

pub(crate) fn sample_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let (count, sum) = xs.clone().fold((0usize, 0.0), |(c, s), x| (c + 1, s + x));
    if count < 2 {
        return 0.0;
    }
    let mean = sum / count as f64;
    let ss: f64 = xs.map(|x| (x - mean) * (x - mean)).sum();
    (ss / (count - 1) as f64).sqrt()
}

fn standardize(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    if n < 2 {
        return DVector::zeros(n);
    }
    let mean = v.mean();
    let sd = sample_std(v.iter().copied());
    if sd < DEGENERATE_STD {
        return DVector::zeros(n);
    }
    v.map(|x| (x - mean) / sd)
}
