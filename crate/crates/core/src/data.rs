//! Domain types shared across the crate.
//!
//! Panels are dated monthly with [`YearMonth`] codes. Returns are stored as
//! excess returns plus a separate risk-free series; gross wealth for utility
//! evaluation is `1 + r_f + w'r_excess`. Signals may contain missing cells,
//! marked as `NaN`, which are resolved by per-window standardization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar month encoded as `YYYYMM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth(u32);

impl YearMonth {
    pub fn new(year: u32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) || year == 0 || year > 9999 {
            return Err(Error::InvalidDate(i64::from(year) * 100 + i64::from(month)));
        }
        Ok(Self(year * 100 + month))
    }

    pub fn from_code(code: i64) -> Result<Self> {
        if !(1..=999_912).contains(&code) {
            return Err(Error::InvalidDate(code));
        }
        let code = code as u32;
        Self::new(code / 100, code % 100).map_err(|_| Error::InvalidDate(i64::from(code)))
    }

    pub fn code(self) -> u32 {
        self.0
    }

    pub fn year(self) -> u32 {
        self.0 / 100
    }

    pub fn month(self) -> u32 {
        self.0 % 100
    }

    /// Months since year 0, used for gap arithmetic.
    fn ordinal(self) -> i64 {
        i64::from(self.year()) * 12 + i64::from(self.month()) - 1
    }

    pub fn next(self) -> Self {
        if self.month() == 12 {
            Self((self.year() + 1) * 100 + 1)
        } else {
            Self(self.0 + 1)
        }
    }

    pub fn add_months(self, n: i64) -> Self {
        let o = self.ordinal() + n;
        Self((o / 12) as u32 * 100 + (o % 12) as u32 + 1)
    }

    pub fn months_until(self, later: Self) -> i64 {
        later.ordinal() - self.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06}", self.0)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let code: i64 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("not a YYYYMM date: {s:?}")))?;
        Self::from_code(code)
    }
}

/// Checks a date axis is strictly increasing with no gaps.
pub fn validate_monthly(dates: &[YearMonth]) -> Result<()> {
    for pair in dates.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        if prev == next {
            return Err(Error::DuplicateDate(next));
        }
        if prev.next() != next {
            return Err(Error::NonMonotoneDates { prev, next });
        }
    }
    Ok(())
}

/// Excess returns for `K` assets plus the risk-free rate, monthly decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<YearMonth>,
    excess: DMatrix<f64>,
    risk_free: DVector<f64>,
    asset_names: Vec<String>,
}

impl ReturnsPanel {
    pub fn new(
        dates: Vec<YearMonth>,
        excess: DMatrix<f64>,
        risk_free: DVector<f64>,
        asset_names: Vec<String>,
    ) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::Degenerate("returns panel has no rows".into()));
        }
        if excess.nrows() != dates.len() || risk_free.len() != dates.len() {
            return Err(Error::Dimension(format!(
                "returns panel: {} dates, {} return rows, {} risk-free rows",
                dates.len(),
                excess.nrows(),
                risk_free.len()
            )));
        }
        if excess.ncols() != asset_names.len() {
            return Err(Error::Dimension(format!(
                "returns panel: {} columns but {} asset names",
                excess.ncols(),
                asset_names.len()
            )));
        }
        validate_monthly(&dates)?;
        for (t, &date) in dates.iter().enumerate() {
            let rf = risk_free[t];
            if !rf.is_finite() {
                return Err(Error::NonFinite { date, series: "RF".into(), value: rf });
            }
            for (k, name) in asset_names.iter().enumerate() {
                let r = excess[(t, k)];
                if r.is_nan() {
                    return Err(Error::MissingReturn { date, series: name.clone() });
                }
                if !r.is_finite() {
                    return Err(Error::NonFinite { date, series: name.clone(), value: r });
                }
                if 1.0 + rf + r <= 0.0 {
                    return Err(Error::Domain { gross: 1.0 + rf + r });
                }
            }
        }
        Ok(Self { dates, excess, risk_free, asset_names })
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn excess(&self) -> &DMatrix<f64> {
        &self.excess
    }

    pub fn risk_free(&self) -> &DVector<f64> {
        &self.risk_free
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }

    pub fn n_assets(&self) -> usize {
        self.excess.ncols()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn index_of(&self, date: YearMonth) -> Option<usize> {
        offset_of(&self.dates, date)
    }
}

/// `L` predictors per month; `NaN` marks a missing cell.
#[derive(Debug, Clone)]
pub struct SignalPanel {
    dates: Vec<YearMonth>,
    raw: DMatrix<f64>,
    signal_names: Vec<String>,
}

impl SignalPanel {
    pub fn new(dates: Vec<YearMonth>, raw: DMatrix<f64>, signal_names: Vec<String>) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::Degenerate("signal panel has no rows".into()));
        }
        if raw.nrows() != dates.len() || raw.ncols() != signal_names.len() {
            return Err(Error::Dimension(format!(
                "signal panel: {} dates, {}x{} values, {} names",
                dates.len(),
                raw.nrows(),
                raw.ncols(),
                signal_names.len()
            )));
        }
        validate_monthly(&dates)?;
        for (t, &date) in dates.iter().enumerate() {
            for (l, name) in signal_names.iter().enumerate() {
                let v = raw[(t, l)];
                if v.is_infinite() {
                    return Err(Error::NonFinite { date, series: name.clone(), value: v });
                }
            }
        }
        Ok(Self { dates, raw, signal_names })
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    pub fn signal_names(&self) -> &[String] {
        &self.signal_names
    }

    pub fn n_signals(&self) -> usize {
        self.raw.ncols()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn is_missing(&self, t: usize, l: usize) -> bool {
        self.raw[(t, l)].is_nan()
    }
}

// PartialEq treating NaN cells as equal, so round-trips can be compared.
impl PartialEq for SignalPanel {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.signal_names == other.signal_names
            && self.raw.shape() == other.raw.shape()
            && self
                .raw
                .iter()
                .zip(other.raw.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

fn offset_of(dates: &[YearMonth], date: YearMonth) -> Option<usize> {
    let first = *dates.first()?;
    let off = first.months_until(date);
    (off >= 0 && (off as usize) < dates.len()).then_some(off as usize)
}

/// Returns and signals paired so that row `i` holds the signal observed at
/// `signal_dates[i]` and the returns realised over the following month.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedData {
    pub signal_dates: Vec<YearMonth>,
    pub signals: DMatrix<f64>,
    pub excess: DMatrix<f64>,
    pub risk_free: DVector<f64>,
    pub asset_names: Vec<String>,
    pub signal_names: Vec<String>,
}

impl AlignedData {
    pub fn len(&self) -> usize {
        self.signal_dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal_dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.excess.ncols()
    }

    pub fn n_signals(&self) -> usize {
        self.signals.ncols()
    }

    /// Month in which the returns of row `i` are realised.
    pub fn return_date(&self, i: usize) -> YearMonth {
        self.signal_dates[i].next()
    }

    /// The returns half as a panel dated by realisation month.
    pub fn returns_panel(&self) -> ReturnsPanel {
        ReturnsPanel {
            dates: self.signal_dates.iter().map(|d| d.next()).collect(),
            excess: self.excess.clone(),
            risk_free: self.risk_free.clone(),
            asset_names: self.asset_names.clone(),
        }
    }

    pub fn signal_panel(&self) -> SignalPanel {
        SignalPanel {
            dates: self.signal_dates.clone(),
            raw: self.signals.clone(),
            signal_names: self.signal_names.clone(),
        }
    }

    /// Keeps only the listed signal columns, in the given order.
    pub fn select_signals(&self, columns: &[usize]) -> Self {
        let t = self.len();
        let signals = DMatrix::from_fn(t, columns.len(), |i, j| self.signals[(i, columns[j])]);
        Self {
            signals,
            signal_names: columns.iter().map(|&c| self.signal_names[c].clone()).collect(),
            ..self.clone()
        }
    }

    /// Replaces the signal block, keeping dates and returns.
    pub fn with_signals(&self, signals: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if signals.nrows() != self.len() || signals.ncols() != names.len() {
            return Err(Error::Dimension("replacement signals do not match the aligned panel".into()));
        }
        Ok(Self { signals, signal_names: names, ..self.clone() })
    }
}

/// Pairs signal row `t` with the return row dated `t + 1`.
pub fn align(returns: &ReturnsPanel, signals: &SignalPanel) -> Result<AlignedData> {
    let range_err = || Error::EmptyOverlap {
        returns_start: returns.dates[0],
        returns_end: *returns.dates.last().unwrap(),
        signals_start: signals.dates[0],
        signals_end: *signals.dates.last().unwrap(),
    };
    let pairs: Vec<(usize, usize)> = signals
        .dates
        .iter()
        .enumerate()
        .filter_map(|(i, d)| returns.index_of(d.next()).map(|j| (i, j)))
        .collect();
    if pairs.is_empty() {
        return Err(range_err());
    }
    let t = pairs.len();
    let k = returns.n_assets();
    let l = signals.n_signals();
    Ok(AlignedData {
        signal_dates: pairs.iter().map(|&(i, _)| signals.dates[i]).collect(),
        signals: DMatrix::from_fn(t, l, |r, c| signals.raw[(pairs[r].0, c)]),
        excess: DMatrix::from_fn(t, k, |r, c| returns.excess[(pairs[r].1, c)]),
        risk_free: DVector::from_fn(t, |r, _| returns.risk_free[pairs[r].1]),
        asset_names: returns.asset_names.clone(),
        signal_names: signals.signal_names.clone(),
    })
}

/// Policy parameter `theta` (K x L, portfolio-weight scale) and benchmark weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    pub theta: DMatrix<f64>,
    pub benchmark: DVector<f64>,
}

impl PolicyMatrix {
    pub fn new(theta: DMatrix<f64>, benchmark: DVector<f64>) -> Result<Self> {
        if theta.nrows() != benchmark.len() {
            return Err(Error::Dimension(format!(
                "theta has {} rows but benchmark has {} weights",
                theta.nrows(),
                benchmark.len()
            )));
        }
        if theta.iter().chain(benchmark.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("policy entries must be finite".into()));
        }
        let total: f64 = benchmark.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("benchmark weights sum to {total}, not 1")));
        }
        Ok(Self { theta, benchmark })
    }

    pub fn zeros(benchmark: DVector<f64>, n_signals: usize) -> Result<Self> {
        let k = benchmark.len();
        Self::new(DMatrix::zeros(k, n_signals), benchmark)
    }

    pub fn n_assets(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_signals(&self) -> usize {
        self.theta.ncols()
    }
}

/// Unit weight on the first asset (the market factor in a factor panel).
pub fn market_benchmark(n_assets: usize) -> DVector<f64> {
    let mut w = DVector::zeros(n_assets);
    if n_assets > 0 {
        w[0] = 1.0;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub position_cap: f64,
    pub gross_cap: f64,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self { position_cap: 0.60, gross_cap: 2.00 }
    }
}

impl ConstraintSet {
    pub fn new(position_cap: f64, gross_cap: f64) -> Result<Self> {
        let c = Self { position_cap, gross_cap };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position_cap > 0.0) || !(self.gross_cap >= self.position_cap) {
            return Err(Error::InvalidParameter(format!(
                "constraints need position_cap > 0 and gross_cap >= position_cap, got {} / {}",
                self.position_cap, self.gross_cap
            )));
        }
        Ok(())
    }
}

/// Prior over `theta`.
///
/// A Gaussian prior with `nu = f64::INFINITY` is flat and reduces the MAP
/// objective to the plain sample-utility objective.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Gaussian {
        mean: DMatrix<f64>,
        nu: f64,
    },
    Horseshoe {
        mean: DMatrix<f64>,
        tau: f64,
        lambda: DMatrix<f64>,
        slab_c: f64,
        sigma2: f64,
        p0: f64,
    },
}

impl PriorSpec {
    pub fn gaussian(mean: DMatrix<f64>, nu: f64) -> Result<Self> {
        let p = Self::Gaussian { mean, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn flat(n_assets: usize, n_signals: usize) -> Self {
        Self::Gaussian { mean: DMatrix::zeros(n_assets, n_signals), nu: f64::INFINITY }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gaussian { nu, .. } => {
                if !(*nu > 0.0) {
                    return Err(Error::InvalidParameter(format!("prior variance nu must be > 0, got {nu}")));
                }
            }
            Self::Horseshoe { mean, tau, lambda, slab_c, sigma2, p0 } => {
                let l = mean.ncols() as f64;
                if lambda.shape() != mean.shape() {
                    return Err(Error::Dimension("horseshoe lambda and mean differ in shape".into()));
                }
                if !(*tau > 0.0 && *slab_c > 0.0 && *sigma2 > 0.0) {
                    return Err(Error::InvalidParameter("horseshoe tau, slab_c and sigma2 must be > 0".into()));
                }
                if lambda.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidParameter("horseshoe local scales must be > 0".into()));
                }
                if !(*p0 > 0.0 && *p0 < l) {
                    return Err(Error::InvalidParameter(format!("p0 must lie in (0, {l}), got {p0}")));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        match self {
            Self::Gaussian { mean, .. } | Self::Horseshoe { mean, .. } => mean,
        }
    }

    /// Elementwise prior variance of each coefficient.
    pub fn variances(&self) -> DMatrix<f64> {
        match self {
            Self::Gaussian { mean, nu } => DMatrix::from_element(mean.nrows(), mean.ncols(), *nu),
            Self::Horseshoe { lambda, tau, slab_c, .. } => {
                crate::horseshoe::regularized_variance(lambda, *tau, *slab_c)
            }
        }
    }

    /// Elementwise prior precision; zero for a flat prior.
    pub fn precisions(&self) -> DMatrix<f64> {
        self.variances().map(|v| 1.0 / v)
    }
}

/// Diagonal Laplace approximation around the MAP policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorApprox {
    pub map_point: PolicyMatrix,
    pub variances: DMatrix<f64>,
    pub draw_count: usize,
}

impl PosteriorApprox {
    pub fn new(map_point: PolicyMatrix, variances: DMatrix<f64>, draw_count: usize) -> Result<Self> {
        if variances.shape() != map_point.theta.shape() {
            return Err(Error::Dimension("posterior variances must match theta".into()));
        }
        if variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("posterior variances must be >= 0".into()));
        }
        if draw_count == 0 {
            return Err(Error::InvalidParameter("draw_count must be >= 1".into()));
        }
        Ok(Self { map_point, variances, draw_count })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Benchmark,
    MeanVariance,
    SimpleMomentum,
    Ppp,
    Bppp,
    Horseshoe,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Benchmark,
        Strategy::MeanVariance,
        Strategy::SimpleMomentum,
        Strategy::Ppp,
        Strategy::Bppp,
        Strategy::Horseshoe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Benchmark => "benchmark",
            Self::MeanVariance => "mean-variance",
            Self::SimpleMomentum => "momentum",
            Self::Ppp => "ppp",
            Self::Bppp => "bppp",
            Self::Horseshoe => "horseshoe",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Benchmark => "Benchmark (Mkt)",
            Self::MeanVariance => "Mean-Variance",
            Self::SimpleMomentum => "Simple Mom",
            Self::Ppp => "PPP",
            Self::Bppp => "BPPP",
            Self::Horseshoe => "Horseshoe",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benchmark" | "market" | "mkt" => Ok(Self::Benchmark),
            "mean-variance" | "meanvariance" | "mv" => Ok(Self::MeanVariance),
            "momentum" | "simple-momentum" | "simplemomentum" | "mom" => Ok(Self::SimpleMomentum),
            "ppp" => Ok(Self::Ppp),
            "bppp" => Ok(Self::Bppp),
            "horseshoe" | "hs" => Ok(Self::Horseshoe),
            other => Err(Error::InvalidParameter(format!("unknown strategy {other:?}"))),
        }
    }
}
