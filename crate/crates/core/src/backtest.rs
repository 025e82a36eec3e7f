//! Expanding-window out-of-sample engine.
//!
//! At each out-of-sample row `t` of an [`AlignedData`] panel the strategy is
//! estimated on rows `0..t` (every return realised by month `t`), weights are
//! formed from the signal observed at `t`, and the return of row `t` is
//! realised one month later. Signals are standardised with moments from rows
//! `0..=t` only, so nothing after `t` can reach the weights at `t`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{align, AlignedData, ConstraintSet, PolicyMatrix, PosteriorApprox, PriorSpec, ReturnsPanel, SignalPanel, Strategy, YearMonth};
use crate::error::{Error, Result};
use crate::estimation::{bppp_weights, laplace_variances, prior_variance, solve_map, MapSolverConfig, Window};
use crate::horseshoe::{self, HorseshoeConfig, HorseshoeState, KappaSummary};
use crate::policy::{portfolio_return, project, MaskMode};

/// Variance convention used when standardising signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceConvention {
    /// Divide by `N`.
    #[default]
    Population,
    /// Divide by `N - 1`.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub strategy: Strategy,
    pub initial_window: usize,
    pub gamma: f64,
    pub delta: f64,
    pub dynamic_prior_mean: bool,
    pub tc_bps_grid: Vec<f64>,
    pub seed: u64,
    /// Laplace draws per rebalance.
    pub draws: usize,
    /// Replaces the calibrated prior variance when set.
    pub nu_override: Option<f64>,
    /// Sets every posterior variance to zero, so averaged weights equal the MAP weights.
    pub degenerate_posterior: bool,
    /// Drift previous weights by realised returns before differencing.
    pub drifted_turnover: bool,
    pub variance_convention: VarianceConvention,
    pub constraints: ConstraintSet,
    pub mask_mode: MaskMode,
    /// Benchmark weights; `None` means all weight on the first asset.
    pub benchmark: Option<Vec<f64>>,
    /// Rolling window for the mean-variance comparison strategy.
    pub mean_variance_window: usize,
    /// Months in the trailing benchmark return used by the momentum strategy.
    pub momentum_lookback: usize,
    /// Expected number of active signals for the horseshoe; `None` uses [`horseshoe::default_p0`].
    pub p0: Option<f64>,
    /// Solver for the Gaussian-prior strategies; the horseshoe uses `horseshoe.solver`.
    pub solver: MapSolverConfig,
    pub horseshoe: HorseshoeConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Bppp,
            initial_window: 120,
            gamma: 5.0,
            delta: 0.35,
            dynamic_prior_mean: true,
            tc_bps_grid: vec![0.0, 10.0],
            seed: 42,
            draws: 1000,
            nu_override: None,
            degenerate_posterior: false,
            drifted_turnover: true,
            variance_convention: VarianceConvention::Population,
            constraints: ConstraintSet::default(),
            mask_mode: MaskMode::default(),
            benchmark: None,
            mean_variance_window: 120,
            momentum_lookback: 12,
            p0: None,
            solver: MapSolverConfig::default(),
            horseshoe: HorseshoeConfig::default(),
        }
    }
}

impl BacktestConfig {
    pub fn for_strategy(strategy: Strategy) -> Self {
        Self { strategy, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_window < 24 {
            return Err(Error::InvalidParameter(format!("initial_window must be >= 24, got {}", self.initial_window)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be > 0, got {}", self.delta)));
        }
        if self.draws == 0 {
            return Err(Error::InvalidParameter("draws must be >= 1".into()));
        }
        if let Some(nu) = self.nu_override {
            if !(nu > 0.0) {
                return Err(Error::InvalidParameter(format!("nu override must be > 0, got {nu}")));
            }
        }
        if self.tc_bps_grid.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParameter("transaction costs must be finite and >= 0".into()));
        }
        if self.mean_variance_window < 2 || self.momentum_lookback == 0 {
            return Err(Error::InvalidParameter("mean_variance_window >= 2 and momentum_lookback >= 1 required".into()));
        }
        self.constraints.validate()?;
        self.solver.validate()
    }

    fn benchmark_weights(&self, n_assets: usize) -> Result<DVector<f64>> {
        match &self.benchmark {
            None => Ok(crate::data::market_benchmark(n_assets)),
            Some(w) => {
                if w.len() != n_assets {
                    return Err(Error::Dimension(format!("benchmark has {} weights for {n_assets} assets", w.len())));
                }
                let w = DVector::from_column_slice(w);
                // PolicyMatrix::new checks the weights sum to one
                PolicyMatrix::zeros(w.clone(), 0)?;
                Ok(w)
            }
        }
    }
}

/// Coefficient diagnostics for one rebalance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    /// Frobenius norm of theta.
    pub norm: f64,
    pub mean_abs: f64,
    /// Euclidean norm of the tilt `theta z_t`.
    pub tilt_norm: f64,
}

impl ThetaSummary {
    fn of(theta: &DMatrix<f64>, z: &DVector<f64>) -> Self {
        let n = theta.len();
        Self {
            norm: theta.norm(),
            mean_abs: if n == 0 { 0.0 } else { theta.iter().map(|v| v.abs()).sum::<f64>() / n as f64 },
            tilt_norm: if n == 0 { 0.0 } else { (theta * z).norm() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Estimation returned an error; weights were carried forward.
    pub failed: bool,
    pub converged: bool,
    pub iterations: usize,
    pub kappa: Option<KappaSummary>,
}

impl Diagnostics {
    fn trivial() -> Self {
        Self { failed: false, converged: true, iterations: 0, kappa: None }
    }
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub strategy: Strategy,
    pub asset_names: Vec<String>,
    /// Month in which each out-of-sample return is realised.
    pub dates: Vec<YearMonth>,
    /// Month whose signal formed each weight vector.
    pub signal_dates: Vec<YearMonth>,
    /// `T_oos x K`.
    pub weights: DMatrix<f64>,
    pub gross_returns: Vec<f64>,
    pub risk_free: Vec<f64>,
    pub tc_bps_grid: Vec<f64>,
    /// One series per entry of `tc_bps_grid`.
    pub net_returns: Vec<Vec<f64>>,
    pub turnover: Vec<f64>,
    pub theta_summary: Vec<ThetaSummary>,
    /// Estimated theta per rebalance; empty for strategies without one.
    pub thetas: Vec<DMatrix<f64>>,
    pub diagnostics: Vec<Diagnostics>,
}

impl BacktestResult {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Gross returns in excess of the risk-free rate.
    pub fn gross_excess(&self) -> Vec<f64> {
        self.gross_returns.iter().zip(&self.risk_free).map(|(r, f)| r - f).collect()
    }

    /// Net returns at `tc_bps_grid[i]` in excess of the risk-free rate.
    pub fn net_excess(&self, i: usize) -> Vec<f64> {
        self.net_returns[i].iter().zip(&self.risk_free).map(|(r, f)| r - f).collect()
    }

    pub fn mean_turnover(&self) -> f64 {
        mean(&self.turnover)
    }

    pub fn failures(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.failed).count()
    }

    /// Writes `weights.csv`, `returns.csv`, `turnover.csv`, `theta_summary.csv`
    /// and `diagnostics.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: dir.display().to_string(), source: e };
        std::fs::create_dir_all(dir).map_err(io)?;
        let fmt = |x: f64| format!("{x:.12e}");

        let mut w = csv::Writer::from_path(dir.join("weights.csv"))?;
        let mut header = vec!["date".to_string()];
        header.extend(self.asset_names.iter().cloned());
        w.write_record(&header)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(self.weights.row(i).iter().map(|&x| fmt(x)));
            w.write_record(&row)?;
        }
        w.flush().map_err(io)?;

        let mut w = csv::Writer::from_path(dir.join("returns.csv"))?;
        let mut header = vec!["date".to_string(), "gross".to_string(), "rf".to_string()];
        header.extend(self.tc_bps_grid.iter().map(|c| format!("net_{c}bps")));
        w.write_record(&header)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.to_string(), fmt(self.gross_returns[i]), fmt(self.risk_free[i])];
            row.extend(self.net_returns.iter().map(|n| fmt(n[i])));
            w.write_record(&row)?;
        }
        w.flush().map_err(io)?;

        let mut w = csv::Writer::from_path(dir.join("turnover.csv"))?;
        w.write_record(["date", "turnover"])?;
        for (d, t) in self.dates.iter().zip(&self.turnover) {
            w.write_record([d.to_string(), fmt(*t)])?;
        }
        w.flush().map_err(io)?;

        let mut w = csv::Writer::from_path(dir.join("theta_summary.csv"))?;
        w.write_record(["date", "theta_norm", "mean_abs_theta", "tilt_norm"])?;
        for (d, s) in self.dates.iter().zip(&self.theta_summary) {
            w.write_record([d.to_string(), fmt(s.norm), fmt(s.mean_abs), fmt(s.tilt_norm)])?;
        }
        w.flush().map_err(io)?;

        let mut w = csv::Writer::from_path(dir.join("diagnostics.csv"))?;
        w.write_record(["date", "failed", "converged", "iterations", "kappa_mean", "kappa_median", "kappa_share_below_0_3"])?;
        for (d, g) in self.dates.iter().zip(&self.diagnostics) {
            let (a, b, c) = match g.kappa {
                Some(k) => (fmt(k.mean), fmt(k.median), fmt(k.share_below_0_3)),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                d.to_string(),
                (g.failed as u8).to_string(),
                (g.converged as u8).to_string(),
                g.iterations.to_string(),
                a,
                b,
                c,
            ])?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standardises rows `0..=window_end` of `signals` with moments from those
/// rows only. Missing (`NaN`) cells are skipped when computing moments and
/// set to zero afterwards; columns with zero variance are set to zero.
pub fn standardize_window(signals: &DMatrix<f64>, window_end: usize, convention: VarianceConvention) -> DMatrix<f64> {
    let n = (window_end + 1).min(signals.nrows());
    let l = signals.ncols();
    let mut out = DMatrix::zeros(n, l);
    for c in 0..l {
        let col = signals.view((0, c), (n, 1));
        let present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        let m = present.len();
        if m < 2 {
            continue;
        }
        let mu = present.iter().sum::<f64>() / m as f64;
        let ss: f64 = present.iter().map(|v| (v - mu) * (v - mu)).sum();
        let denom = match convention {
            VarianceConvention::Population => m as f64,
            VarianceConvention::Sample => (m - 1) as f64,
        };
        let sd = (ss / denom).sqrt();
        if !(sd > 1e-12 * mu.abs()) || sd == 0.0 {
            continue;
        }
        for r in 0..n {
            let v = signals[(r, c)];
            out[(r, c)] = if v.is_nan() { 0.0 } else { (v - mu) / sd };
        }
    }
    out
}

/// One-way turnover `sum_k |w_t,k - w+_{t-1,k}|`.
///
/// Row `i` of `excess`/`risk_free` is the return earned by `weights` row `i`.
/// With `drifted`, `w+` is the previous weight grown by its realised return and
/// divided by portfolio growth; otherwise `w+` is the previous weight. The first
/// entry is zero.
pub fn turnover(weights: &DMatrix<f64>, excess: &DMatrix<f64>, risk_free: &[f64], drifted: bool) -> Result<Vec<f64>> {
    let (t, k) = weights.shape();
    if excess.shape() != (t, k) || risk_free.len() != t {
        return Err(Error::Dimension("turnover: weights and returns disagree".into()));
    }
    let mut out = Vec::with_capacity(t);
    if t == 0 {
        return Ok(out);
    }
    out.push(0.0);
    for i in 1..t {
        let prev = weights.row(i - 1).transpose();
        let rf = risk_free[i - 1];
        let rp = portfolio_return(&prev, excess.row(i - 1).transpose().as_view(), rf)?;
        let growth = 1.0 + rp;
        let mut acc = 0.0;
        for j in 0..k {
            let carried = if drifted && growth > 0.0 {
                prev[j] * (1.0 + (rf + excess[(i - 1, j)])) / growth
            } else {
                prev[j]
            };
            acc += (weights[(i, j)] - carried).abs();
        }
        out.push(acc);
    }
    Ok(out)
}

/// `net_t = gross_t - tc_bps / 1e4 * turnover_t`.
pub fn apply_costs(gross: &[f64], turnover: &[f64], tc_bps: f64) -> Result<Vec<f64>> {
    if gross.len() != turnover.len() {
        return Err(Error::Dimension("apply_costs: series lengths differ".into()));
    }
    Ok(gross.iter().zip(turnover).map(|(g, to)| g - tc_bps / 1e4 * to).collect())
}

/// Trailing `lookback`-month compounded benchmark excess return known at each
/// signal date; `NaN` until enough history exists.
pub fn momentum_signal(data: &AlignedData, benchmark: &DVector<f64>, lookback: usize) -> DMatrix<f64> {
    let t = data.len();
    let bench: Vec<f64> = (0..t).map(|s| benchmark.dot(&data.excess.row(s).transpose())).collect();
    DMatrix::from_fn(t, 1, |s, _| {
        // returns of rows s-lookback..s are realised by signal date s
        if s < lookback {
            f64::NAN
        } else {
            bench[s - lookback..s].iter().map(|r| (1.0 + r).ln()).sum::<f64>().exp() - 1.0
        }
    })
}

/// Mixes the run seed with the row index into an independent per-date seed.
pub fn date_seed(seed: u64, t: usize) -> u64 {
    let mut z = seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Estimate {
    weights: DVector<f64>,
    theta: Option<DMatrix<f64>>,
    converged: bool,
    iterations: usize,
    kappa: Option<KappaSummary>,
    hs_state: Option<HorseshoeState>,
}

/// Aligns the panels and runs [`run_backtest_aligned`].
pub fn run_backtest(cfg: &BacktestConfig, returns: &ReturnsPanel, signals: &SignalPanel) -> Result<BacktestResult> {
    let data = align(returns, signals)?;
    run_backtest_aligned(cfg, &data)
}

/// Runs several strategies on the same data in parallel; results keep the input order.
pub fn run_strategies(base: &BacktestConfig, data: &AlignedData, strategies: &[Strategy]) -> Vec<Result<BacktestResult>> {
    strategies
        .par_iter()
        .map(|&s| run_backtest_aligned(&BacktestConfig { strategy: s, ..base.clone() }, data))
        .collect()
}

pub fn run_backtest_aligned(cfg: &BacktestConfig, data: &AlignedData) -> Result<BacktestResult> {
    cfg.validate()?;
    let t_total = data.len();
    let t0 = cfg.initial_window;
    if t_total <= t0 {
        return Err(Error::Degenerate(format!("{t_total} aligned rows do not exceed the initial window {t0}")));
    }
    let k = data.n_assets();
    let wb = cfg.benchmark_weights(k)?;

    let raw_signals = match cfg.strategy {
        Strategy::SimpleMomentum => momentum_signal(data, &wb, cfg.momentum_lookback),
        _ => data.signals.clone(),
    };
    let l = raw_signals.ncols();
    let parametric = matches!(cfg.strategy, Strategy::SimpleMomentum | Strategy::Ppp | Strategy::Bppp | Strategy::Horseshoe);

    let n_oos = t_total - t0;
    let mut weights = DMatrix::zeros(n_oos, k);
    let mut gross = Vec::with_capacity(n_oos);
    let mut rf = Vec::with_capacity(n_oos);
    let mut summaries = Vec::with_capacity(n_oos);
    let mut thetas = Vec::new();
    let mut diagnostics = Vec::with_capacity(n_oos);

    let mut prev_theta: Option<DMatrix<f64>> = None;
    let mut prev_weights: Option<DVector<f64>> = None;
    let mut hs_state: Option<HorseshoeState> = None;

    for (i, t) in (t0..t_total).enumerate() {
        let z_all = standardize_window(&raw_signals, t, cfg.variance_convention);
        let z_t = z_all.row(t).transpose();

        let est = if parametric {
            estimate_parametric(cfg, data, &z_all, t, &wb, prev_theta.as_ref(), hs_state.as_ref())
        } else if cfg.strategy == Strategy::MeanVariance {
            mean_variance(cfg, data, t).map(|w| Estimate::plain(w))
        } else {
            Ok(Estimate::plain(wb.clone()))
        };

        let (w, diag) = match est {
            Ok(e) => {
                if let Some(th) = &e.theta {
                    prev_theta = Some(th.clone());
                }
                if e.hs_state.is_some() {
                    hs_state = e.hs_state;
                }
                let d = Diagnostics { failed: false, converged: e.converged, iterations: e.iterations, kappa: e.kappa };
                (e.weights, d)
            }
            Err(err) => {
                log::warn!("{} estimation failed at {}: {err}; carrying weights forward", cfg.strategy, data.signal_dates[t]);
                let w = prev_weights.clone().unwrap_or_else(|| wb.clone());
                (w, Diagnostics { failed: true, converged: false, iterations: 0, kappa: None })
            }
        };

        let theta_now = if parametric {
            prev_theta.clone().unwrap_or_else(|| DMatrix::zeros(k, l))
        } else {
            DMatrix::zeros(k, 0)
        };
        summaries.push(ThetaSummary::of(&theta_now, &z_t));
        if parametric {
            thetas.push(theta_now);
        }

        gross.push(portfolio_return(&w, data.excess.row(t).transpose().as_view(), data.risk_free[t])?);
        rf.push(data.risk_free[t]);
        weights.set_row(i, &w.transpose());
        diagnostics.push(diag);
        prev_weights = Some(w);
    }

    let realised = data.excess.rows(t0, n_oos).into_owned();
    let turnover = turnover(&weights, &realised, &rf, cfg.drifted_turnover)?;
    let net_returns = cfg
        .tc_bps_grid
        .iter()
        .map(|&c| apply_costs(&gross, &turnover, c))
        .collect::<Result<Vec<_>>>()?;

    Ok(BacktestResult {
        strategy: cfg.strategy,
        asset_names: data.asset_names.clone(),
        dates: (t0..t_total).map(|t| data.return_date(t)).collect(),
        signal_dates: data.signal_dates[t0..].to_vec(),
        weights,
        gross_returns: gross,
        risk_free: rf,
        tc_bps_grid: cfg.tc_bps_grid.clone(),
        net_returns,
        turnover,
        theta_summary: summaries,
        thetas,
        diagnostics,
    })
}

impl Estimate {
    fn plain(weights: DVector<f64>) -> Self {
        let d = Diagnostics::trivial();
        Self { weights, theta: None, converged: d.converged, iterations: 0, kappa: None, hs_state: None }
    }
}

/// Tangency weights `Sigma^-1 mu / gamma` from the trailing window, projected.
fn mean_variance(cfg: &BacktestConfig, data: &AlignedData, t: usize) -> Result<DVector<f64>> {
    if !(cfg.gamma > 0.0) {
        return Err(Error::InvalidParameter("mean-variance weights need gamma > 0".into()));
    }
    let start = t.saturating_sub(cfg.mean_variance_window);
    let r = data.excess.rows(start, t - start);
    let n = r.nrows();
    if n < 2 {
        return Err(Error::Degenerate("mean-variance window has fewer than 2 rows".into()));
    }
    let mu = r.row_mean().transpose();
    let centred = DMatrix::from_fn(n, r.ncols(), |i, j| r[(i, j)] - mu[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = cov.clone().symmetric_eigenvalues();
    if !(eig.min() > 1e-12 * eig.max()) {
        return Err(Error::Degenerate("sample covariance is singular".into()));
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Degenerate("sample covariance is not positive definite".into()))?;
    let w = chol.solve(&mu) / cfg.gamma;
    Ok(project(&w, &cfg.constraints).0)
}

fn estimate_parametric(
    cfg: &BacktestConfig,
    data: &AlignedData,
    z_all: &DMatrix<f64>,
    t: usize,
    wb: &DVector<f64>,
    prev_theta: Option<&DMatrix<f64>>,
    prev_state: Option<&HorseshoeState>,
) -> Result<Estimate> {
    let k = wb.len();
    let l = z_all.ncols();
    let z_t = z_all.row(t).transpose();
    if l == 0 {
        // no tilts are possible
        let w = project(wb, &cfg.constraints).0;
        return Ok(Estimate { theta: Some(DMatrix::zeros(k, 0)), ..Estimate::plain(w) });
    }
    let window = Window::new(z_all.rows(0, t), data.excess.rows(0, t), data.risk_free.rows(0, t))?
        .with_constraints(cfg.constraints)
        .with_mask_mode(cfg.mask_mode);
    let mean = match (cfg.dynamic_prior_mean, prev_theta) {
        (true, Some(th)) => th.clone(),
        _ => DMatrix::zeros(k, l),
    };
    let solver = MapSolverConfig { warm_start: prev_theta.cloned(), ..cfg.solver.clone() };
    let seed = date_seed(cfg.seed, t);

    match cfg.strategy {
        Strategy::Ppp | Strategy::SimpleMomentum => {
            let prior = PriorSpec::Gaussian { mean, nu: cfg.nu_override.unwrap_or(f64::INFINITY) };
            let sol = solve_map(&window, wb, &prior, cfg.gamma, &solver)?;
            let raw = crate::policy::raw_weights(&sol.policy, z_t.as_view())?;
            Ok(Estimate {
                weights: project(&raw, &cfg.constraints).0,
                theta: Some(sol.policy.theta),
                converged: sol.converged,
                iterations: sol.iterations,
                kappa: None,
                hs_state: None,
            })
        }
        Strategy::Bppp => {
            let nu = match cfg.nu_override {
                Some(nu) => nu,
                None => prior_variance(cfg.delta, l, t)?,
            };
            let prior = PriorSpec::gaussian(mean, nu)?;
            let sol = solve_map(&window, wb, &prior, cfg.gamma, &solver)?;
            let variances = if cfg.degenerate_posterior {
                DMatrix::zeros(k, l)
            } else {
                laplace_variances(&sol.policy, &window, &prior, cfg.gamma)?
            };
            let post = PosteriorApprox::new(sol.policy.clone(), variances, cfg.draws)?;
            Ok(Estimate {
                weights: bppp_weights(&post, z_t.as_view(), &cfg.constraints, seed)?,
                theta: Some(sol.policy.theta),
                converged: sol.converged,
                iterations: sol.iterations,
                kappa: None,
                hs_state: None,
            })
        }
        Strategy::Horseshoe => {
            let p0 = cfg.p0.unwrap_or_else(|| horseshoe::default_p0(l));
            let state0 = match prev_state {
                Some(s) => s.clone(),
                None => HorseshoeState::initial(&window, &mean, p0)?,
            };
            let fit = horseshoe::fit_horseshoe(&window, wb, &mean, &state0, cfg.gamma, &cfg.horseshoe)?;
            let variances = if cfg.degenerate_posterior {
                DMatrix::zeros(k, l)
            } else {
                horseshoe::horseshoe_laplace_variances(&fit.policy, &window, &fit.state, cfg.gamma)?
            };
            let kappa = horseshoe::kappa(&fit.state, &horseshoe::signal_norms(&window))?;
            let post = PosteriorApprox::new(fit.policy.clone(), variances, cfg.draws)?;
            Ok(Estimate {
                weights: bppp_weights(&post, z_t.as_view(), &cfg.constraints, seed)?,
                theta: Some(fit.policy.theta),
                converged: fit.converged,
                iterations: fit.sweeps,
                kappa: Some(horseshoe::summarize_kappa(&kappa)),
                hs_state: Some(fit.state),
            })
        }
        Strategy::Benchmark | Strategy::MeanVariance => unreachable!("not a parametric strategy"),
    }
}

#[cfg(test)]
mod tests;
