//! Performance statistics: Sharpe ratios, certainty equivalents, drawdowns,
//! tail risk, spanning regressions, the block-bootstrap Sharpe-difference
//! test and rolling or subperiod Sharpe ratios.
//!
//! Inputs are monthly decimal returns. Annualisation uses 12 periods.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::YearMonth;
use crate::error::{Error, Result};

pub const PERIODS_PER_YEAR: f64 = 12.0;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// `(mean * a) / (sd * sqrt(a))` with the `N - 1` standard deviation.
pub fn sharpe(excess: &[f64], annualization: f64) -> Result<f64> {
    if excess.len() < 2 {
        return Err(Error::Degenerate("Sharpe ratio needs at least 2 observations".into()));
    }
    let m = mean(excess);
    let sd = sample_sd(excess);
    if !(sd > 1e-12 * m.abs()) || sd == 0.0 {
        return Err(Error::Degenerate("Sharpe ratio of a series with zero variance".into()));
    }
    Ok(m * annualization / (sd * annualization.sqrt()))
}

/// Monthly certainty equivalent under CRRA utility of gross wealth `1 + r`.
pub fn certainty_equivalent_monthly(returns: &[f64], gamma: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::Degenerate("certainty equivalent of an empty series".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
    }
    if let Some(&r) = returns.iter().find(|r| !(1.0 + **r > 0.0)) {
        return Err(Error::Domain { gross: 1.0 + r });
    }
    let logs: Vec<f64> = returns.iter().map(|r| r.ln_1p()).collect();
    if gamma == 1.0 {
        return Ok(mean(&logs).exp_m1());
    }
    // log mean (1+r)^(1-gamma), evaluated with a max shift for large gamma
    let a = 1.0 - gamma;
    let shift = logs.iter().map(|l| a * l).fold(f64::NEG_INFINITY, f64::max);
    let lme = shift + (logs.iter().map(|l| (a * l - shift).exp()).sum::<f64>() / logs.len() as f64).ln();
    Ok((lme / a).exp_m1())
}

/// Annualised certainty equivalent `(1 + CE_m)^12 - 1`.
pub fn certainty_equivalent(returns: &[f64], gamma: f64) -> Result<f64> {
    let m = certainty_equivalent_monthly(returns, gamma)?;
    Ok((1.0 + m).powf(PERIODS_PER_YEAR) - 1.0)
}

/// Annual basis points a benchmark investor would pay to switch.
pub fn performance_fee(ce_strategy: f64, ce_benchmark: f64) -> f64 {
    (ce_strategy - ce_benchmark) * 1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drawdown {
    /// Most negative drawdown, `<= 0`.
    pub max_drawdown: f64,
    pub path: Vec<f64>,
}

pub fn drawdown_stats(returns: &[f64]) -> Result<Drawdown> {
    if returns.is_empty() {
        return Err(Error::Degenerate("drawdown of an empty series".into()));
    }
    let mut wealth = 1.0;
    let mut peak: f64 = 1.0;
    let mut path = Vec::with_capacity(returns.len());
    for r in returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        path.push(wealth / peak - 1.0);
    }
    let max_drawdown = path.iter().copied().fold(0.0, f64::min);
    Ok(Drawdown { max_drawdown, path })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub var95: f64,
    pub cvar95: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Empirical 5% VaR (the `ceil(0.05 N)`-th smallest return), the mean of
/// returns at or below it, and moment skewness and excess kurtosis.
pub fn tail_stats(returns: &[f64]) -> Result<TailStats> {
    let n = returns.len();
    if n < 20 {
        return Err(Error::Degenerate(format!("tail statistics need >= 20 observations, got {n}")));
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((0.05 * n as f64).ceil() as usize).max(1) - 1;
    let var95 = sorted[idx];
    let tail: Vec<f64> = sorted.iter().copied().take_while(|r| *r <= var95).collect();
    let cvar95 = mean(&tail);

    let m = mean(returns);
    let moment = |p: i32| returns.iter().map(|r| (r - m).powi(p)).sum::<f64>() / n as f64;
    let m2 = moment(2);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (moment(3) / m2.powf(1.5), moment(4) / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok(TailStats { var95, cvar95, skewness, excess_kurtosis })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardErrors {
    #[default]
    Homoskedastic,
    /// White (HC0) heteroskedasticity-robust errors.
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spanning {
    /// Intercept times 12.
    pub alpha_annual: f64,
    pub beta: f64,
    pub t_alpha: f64,
    pub p_alpha: f64,
    pub r_squared: f64,
}

/// OLS of strategy excess returns on the market excess return with an intercept.
pub fn spanning_regression(strategy: &[f64], market: &[f64], errors: StandardErrors) -> Result<Spanning> {
    let n = strategy.len();
    if market.len() != n {
        return Err(Error::Dimension("spanning regression series lengths differ".into()));
    }
    if n < 30 {
        return Err(Error::Degenerate(format!("spanning regression needs >= 30 observations, got {n}")));
    }
    let (my, mx) = (mean(strategy), mean(market));
    let sxx: f64 = market.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx / n as f64 > (1e-12 * mx).powi(2)) || sxx == 0.0 {
        return Err(Error::Degenerate("market regressor has zero variance".into()));
    }
    let sxy: f64 = market.iter().zip(strategy).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = strategy.iter().map(|y| (y - my) * (y - my)).sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let resid: Vec<f64> = strategy.iter().zip(market).map(|(y, x)| y - alpha - beta * x).collect();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let r_squared = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };

    let nf = n as f64;
    let sum_x2: f64 = market.iter().map(|x| x * x).sum();
    let var_alpha = match errors {
        StandardErrors::Homoskedastic => ssr / (nf - 2.0) * sum_x2 / (nf * sxx),
        StandardErrors::Robust => {
            // (X'X)^-1 X' diag(e^2) X (X'X)^-1, intercept entry
            let det = nf * sum_x2 - (nf * mx) * (nf * mx);
            let (a, b) = (sum_x2 / det, -nf * mx / det);
            resid.iter().zip(market).map(|(e, x)| (a + b * x).powi(2) * e * e).sum()
        }
    };
    let se = var_alpha.sqrt();
    let t_alpha = if se > 0.0 {
        alpha / se
    } else if alpha == 0.0 {
        0.0
    } else {
        alpha.signum() * f64::INFINITY
    };
    let dist = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p_alpha = 2.0 * dist.sf(t_alpha.abs());
    Ok(Spanning { alpha_annual: alpha * PERIODS_PER_YEAR, beta, t_alpha, p_alpha, r_squared })
}

/// Largest `b` with `b^3 <= n`.
pub fn block_length(n: usize) -> usize {
    let mut b = (n as f64).cbrt().floor() as usize;
    while (b + 1).pow(3) <= n {
        b += 1;
    }
    while b > 1 && b.pow(3) > n {
        b -= 1;
    }
    b.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpeDiffTest {
    /// Annualised Sharpe of the first series minus that of the second.
    pub diff: f64,
    /// Annualised standard error of the difference.
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub block_length: usize,
    pub n_boot: usize,
}

/// Moments `(mu_a, mu_b, E a^2, E b^2)` of a paired sample.
fn moments(a: &[f64], b: &[f64]) -> Vector4<f64> {
    let n = a.len() as f64;
    let mut v = Vector4::zeros();
    for (x, y) in a.iter().zip(b) {
        v += Vector4::new(*x, *y, x * x, y * y);
    }
    v / n
}

/// Monthly Sharpe difference and its gradient with respect to the moments.
fn diff_and_gradient(v: &Vector4<f64>) -> (f64, Vector4<f64>) {
    let (ma, mb, ga, gb) = (v[0], v[1], v[2], v[3]);
    let (va, vb) = (ga - ma * ma, gb - mb * mb);
    let d = ma / va.sqrt() - mb / vb.sqrt();
    let grad = Vector4::new(
        ga / va.powf(1.5),
        -gb / vb.powf(1.5),
        -ma / (2.0 * va.powf(1.5)),
        mb / (2.0 * vb.powf(1.5)),
    );
    (d, grad)
}

fn centred(a: &[f64], b: &[f64], v: &Vector4<f64>) -> Vec<Vector4<f64>> {
    a.iter().zip(b).map(|(x, y)| Vector4::new(*x, *y, x * x, y * y) - v).collect()
}

/// Bartlett-kernel long-run covariance with bandwidth `lag`.
fn hac(y: &[Vector4<f64>], lag: usize) -> Matrix4<f64> {
    let n = y.len();
    let mut psi = Matrix4::zeros();
    for t in 0..n {
        psi += y[t] * y[t].transpose();
    }
    for j in 1..=lag.min(n - 1) {
        let w = 1.0 - j as f64 / (lag + 1) as f64;
        let mut g = Matrix4::zeros();
        for t in j..n {
            g += y[t] * y[t - j].transpose();
        }
        psi += w * (g + g.transpose());
    }
    psi / n as f64
}

/// Long-run covariance from non-overlapping block sums of length `b`.
fn block_covariance(y: &[Vector4<f64>], b: usize) -> Matrix4<f64> {
    let blocks = y.len() / b;
    let mut psi = Matrix4::zeros();
    for j in 0..blocks {
        let s: Vector4<f64> = y[j * b..(j + 1) * b].iter().sum();
        psi += s * s.transpose();
    }
    psi / (blocks * b) as f64
}

fn studentized(a: &[f64], b: &[f64], cov: impl Fn(&[Vector4<f64>]) -> Matrix4<f64>) -> (f64, f64) {
    let v = moments(a, b);
    let (d, g) = diff_and_gradient(&v);
    let psi = cov(&centred(a, b, &v));
    let var = (g.transpose() * psi * g)[(0, 0)] / a.len() as f64;
    (d, var.max(0.0).sqrt())
}

/// Studentised circular block-bootstrap test of equal Sharpe ratios.
///
/// The point estimate uses the delta method with a Bartlett long-run
/// covariance; each bootstrap replicate is studentised with the block-sum
/// covariance of its own resample. Blocks have length `floor(T^(1/3))`.
/// The p-value is `(1 + #{|d*| >= |d|}) / (1 + n_boot)` on the centred
/// statistics `d* = (diff* - diff) / se*`.
pub fn sharpe_diff_test(a: &[f64], b: &[f64], seed: u64, n_boot: usize) -> Result<SharpeDiffTest> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::Dimension("Sharpe difference test series lengths differ".into()));
    }
    if n < 60 {
        return Err(Error::Degenerate(format!("Sharpe difference test needs >= 60 observations, got {n}")));
    }
    if n_boot == 0 {
        return Err(Error::InvalidParameter("n_boot must be >= 1".into()));
    }
    for s in [a, b] {
        let m = mean(s);
        if !(s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() > 0.0) {
            return Err(Error::Degenerate("Sharpe difference of a series with zero variance".into()));
        }
    }
    // Evaluate in a canonical order so that swapping the inputs negates the statistic exactly.
    let swap = a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Greater);
    let (x, y, sign) = if swap { (b, a, -1.0) } else { (a, b, 1.0) };
    let bl = block_length(n);
    let ann = PERIODS_PER_YEAR.sqrt();

    let (d, se) = studentized(x, y, |c| hac(c, bl));
    if se == 0.0 {
        return Ok(SharpeDiffTest { diff: 0.0, std_error: 0.0, t_stat: 0.0, p_value: 1.0, block_length: bl, n_boot });
    }
    let t = d / se;

    let n_blocks = n.div_ceil(bl);
    let exceed: usize = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut xs = Vec::with_capacity(n_blocks * bl);
            let mut ys = Vec::with_capacity(n_blocks * bl);
            for _ in 0..n_blocks {
                let start = rng.random_range(0..n);
                for k in 0..bl {
                    let idx = (start + k) % n;
                    xs.push(x[idx]);
                    ys.push(y[idx]);
                }
            }
            xs.truncate(n);
            ys.truncate(n);
            let (ds, ses) = studentized(&xs, &ys, |c| block_covariance(c, bl));
            usize::from(ses > 0.0 && ((ds - d) / ses).abs() >= t.abs())
        })
        .sum();
    let p_value = (1 + exceed) as f64 / (1 + n_boot) as f64;
    Ok(SharpeDiffTest {
        diff: sign * d * ann,
        std_error: se * ann,
        t_stat: sign * t,
        p_value,
        block_length: bl,
        n_boot,
    })
}

/// Trailing-window Sharpe ratios; `None` before the window fills or where the
/// window has zero variance.
pub fn rolling_sharpe(excess: &[f64], window: usize) -> Vec<Option<f64>> {
    (0..excess.len())
        .map(|i| {
            if window < 2 || i + 1 < window {
                None
            } else {
                sharpe(&excess[i + 1 - window..=i], PERIODS_PER_YEAR).ok()
            }
        })
        .collect()
}

/// Calendar segment, inclusive at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub start: YearMonth,
    pub end: YearMonth,
}

impl Segment {
    pub fn years(label: &str, first: u32, last: u32) -> Self {
        Self {
            label: label.into(),
            start: YearMonth::new(first, 1).expect("valid year"),
            end: YearMonth::new(last, 12).expect("valid year"),
        }
    }
}

/// Every calendar decade fully covered by `dates`, then the crisis windows
/// (GFC 2006-2011, COVID 2018-2022).
pub fn default_segments(dates: &[YearMonth]) -> Vec<Segment> {
    let mut out = Vec::new();
    if let (Some(first), Some(last)) = (dates.first(), dates.last()) {
        let mut decade = first.year().div_ceil(10) * 10;
        if first.year() % 10 == 0 && first.month() == 1 {
            decade = first.year();
        }
        while YearMonth::new(decade + 9, 12).map(|e| e <= *last).unwrap_or(false) {
            out.push(Segment::years(&format!("{decade}s"), decade, decade + 9));
            decade += 10;
        }
    }
    out.push(Segment::years("GFC", 2006, 2011));
    out.push(Segment::years("COVID", 2018, 2022));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSharpe {
    pub label: String,
    pub months: usize,
    /// `None` when the segment is skipped.
    pub sharpe: Option<f64>,
    /// Fewer than 12 months fell inside the segment.
    pub skipped: bool,
}

pub fn subperiod_sharpe(dates: &[YearMonth], excess: &[f64], segments: &[Segment]) -> Result<Vec<SegmentSharpe>> {
    if dates.len() != excess.len() {
        return Err(Error::Dimension("dates and returns differ in length".into()));
    }
    Ok(segments
        .iter()
        .map(|seg| {
            let x: Vec<f64> = dates
                .iter()
                .zip(excess)
                .filter(|(d, _)| **d >= seg.start && **d <= seg.end)
                .map(|(_, r)| *r)
                .collect();
            let skipped = x.len() < 12;
            SegmentSharpe {
                label: seg.label.clone(),
                months: x.len(),
                sharpe: if skipped { None } else { sharpe(&x, PERIODS_PER_YEAR).ok() },
                skipped,
            }
        })
        .collect())
}

/// One row of the headline performance table. Mean and volatility are
/// annualised excess-return figures; drawdown and tail statistics use total
/// gross returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub label: String,
    pub mean: f64,
    pub vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub var95: f64,
    pub cvar95: f64,
    pub turnover: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub sharpe_net: f64,
}

pub fn performance_row(
    label: &str,
    gross_excess: &[f64],
    gross_total: &[f64],
    net_excess: &[f64],
    turnover: &[f64],
) -> Result<PerformanceRow> {
    let dd = drawdown_stats(gross_total)?;
    let tails = tail_stats(gross_total)?;
    Ok(PerformanceRow {
        label: label.into(),
        mean: mean(gross_excess) * PERIODS_PER_YEAR,
        vol: sample_sd(gross_excess) * PERIODS_PER_YEAR.sqrt(),
        sharpe: sharpe(gross_excess, PERIODS_PER_YEAR)?,
        max_drawdown: dd.max_drawdown,
        var95: tails.var95,
        cvar95: tails.cvar95,
        turnover: mean(turnover),
        skewness: tails.skewness,
        kurtosis: tails.excess_kurtosis,
        sharpe_net: sharpe(net_excess, PERIODS_PER_YEAR)?,
    })
}
