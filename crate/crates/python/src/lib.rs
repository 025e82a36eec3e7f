//! Python bindings for `bppp`.
//!
//! Matrices cross the boundary as lists of rows.

use bppp::analytics;
use bppp::backtest::{self, BacktestConfig};
use bppp::estimation::{self, MapSolverConfig, Window};
use bppp::ingestion::{self, SyntheticSpec};
use bppp::{align, market_benchmark, AlignedData, ConstraintSet, PriorSpec, Strategy, YearMonth};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: bppp::Error) -> PyErr {
    match e {
        bppp::Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn codes(dates: &[YearMonth]) -> Vec<u32> {
    dates.iter().map(|d| d.code()).collect()
}

/// Aligned returns and signals: signal row `t` pairs with the return of the following month.
#[pyclass(name = "Dataset", module = "bppp_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: AlignedData,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(factors: &str, signals: &str) -> PyResult<Self> {
        let r = ingestion::load_factors(factors.as_ref()).map_err(err)?;
        let s = ingestion::load_signals(signals.as_ref()).map_err(err)?;
        Ok(Self { inner: align(&r, &s).map_err(err)? })
    }

    /// Synthetic panels; returns the dataset and the true coefficient matrix.
    #[staticmethod]
    #[pyo3(signature = (n_assets=3, n_signals=10, n_periods=240, active=3, theta_scale=0.01, noise=0.04, seed=0))]
    fn synthetic(
        n_assets: usize,
        n_signals: usize,
        n_periods: usize,
        active: usize,
        theta_scale: f64,
        noise: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<Vec<f64>>)> {
        let spec = SyntheticSpec { n_assets, n_signals, n_periods, active, theta_scale, noise, seed, ..Default::default() };
        let (r, s, truth) = ingestion::synthetic_dataset(&spec).map_err(err)?;
        Ok((Self { inner: align(&r, &s).map_err(err)? }, rows(&truth.theta)))
    }

    /// Factor returns plus three timing signals per factor.
    #[staticmethod]
    fn with_timing_signals(factors: &str) -> PyResult<Self> {
        let r = ingestion::load_factors(factors.as_ref()).map_err(err)?;
        let s = ingestion::build_timing_signals(&r, &ingestion::cumulative_index(&r)).map_err(err)?;
        Ok(Self { inner: align(&r, &s).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_assets(&self) -> usize {
        self.inner.n_assets()
    }

    #[getter]
    fn n_signals(&self) -> usize {
        self.inner.n_signals()
    }

    /// Return months as YYYYMM integers.
    #[getter]
    fn dates(&self) -> Vec<u32> {
        (0..self.inner.len()).map(|i| self.inner.return_date(i).code()).collect()
    }

    #[getter]
    fn excess(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.excess)
    }

    #[getter]
    fn signals(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.signals)
    }

    fn __repr__(&self) -> String {
        format!("Dataset(T={}, K={}, L={})", self.inner.len(), self.inner.n_assets(), self.inner.n_signals())
    }
}

#[pyclass(name = "BacktestResult", module = "bppp_py", get_all)]
struct PyBacktestResult {
    strategy: String,
    dates: Vec<u32>,
    signal_dates: Vec<u32>,
    weights: Vec<Vec<f64>>,
    gross_returns: Vec<f64>,
    risk_free: Vec<f64>,
    tc_bps_grid: Vec<f64>,
    net_returns: Vec<Vec<f64>>,
    turnover: Vec<f64>,
    failures: usize,
}

#[pymethods]
impl PyBacktestResult {
    fn __len__(&self) -> usize {
        self.dates.len()
    }

    fn gross_excess(&self) -> Vec<f64> {
        self.gross_returns.iter().zip(&self.risk_free).map(|(r, f)| r - f).collect()
    }

    /// Annualised Sharpe ratio of gross excess returns.
    fn sharpe(&self) -> PyResult<f64> {
        analytics::sharpe(&self.gross_excess(), 12.0).map_err(err)
    }

    /// Annualised certainty equivalent of gross total returns.
    fn certainty_equivalent(&self, gamma: f64) -> PyResult<f64> {
        analytics::certainty_equivalent(&self.gross_returns, gamma).map_err(err)
    }

    fn mean_turnover(&self) -> f64 {
        self.turnover.iter().sum::<f64>() / self.turnover.len().max(1) as f64
    }

    fn __repr__(&self) -> String {
        format!("BacktestResult({}, {} dates)", self.strategy, self.dates.len())
    }
}

#[pyfunction]
#[pyo3(signature = (
    data, strategy="bppp", gamma=5.0, delta=0.35, initial_window=120, draws=1000, seed=42,
    tc_bps=vec![0.0, 10.0], dynamic_prior_mean=true, nu=None, degenerate_posterior=false,
    position_cap=None, gross_cap=None,
))]
#[allow(clippy::too_many_arguments)]
fn run_backtest(
    py: Python<'_>,
    data: &PyDataset,
    strategy: &str,
    gamma: f64,
    delta: f64,
    initial_window: usize,
    draws: usize,
    seed: u64,
    tc_bps: Vec<f64>,
    dynamic_prior_mean: bool,
    nu: Option<f64>,
    degenerate_posterior: bool,
    position_cap: Option<f64>,
    gross_cap: Option<f64>,
) -> PyResult<PyBacktestResult> {
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let defaults = ConstraintSet::default();
    let constraints = ConstraintSet::new(
        position_cap.unwrap_or(defaults.position_cap),
        gross_cap.unwrap_or(defaults.gross_cap),
    )
    .map_err(err)?;
    let cfg = BacktestConfig {
        strategy,
        gamma,
        delta,
        initial_window,
        draws,
        seed,
        tc_bps_grid: tc_bps,
        dynamic_prior_mean,
        nu_override: nu,
        degenerate_posterior,
        constraints,
        ..Default::default()
    };
    cfg.validate().map_err(err)?;
    let data = data.inner.clone();
    let res = py.detach(move || backtest::run_backtest_aligned(&cfg, &data)).map_err(err)?;
    Ok(PyBacktestResult {
        strategy: res.strategy.name().into(),
        dates: codes(&res.dates),
        signal_dates: codes(&res.signal_dates),
        weights: rows(&res.weights),
        failures: res.failures(),
        gross_returns: res.gross_returns,
        risk_free: res.risk_free,
        tc_bps_grid: res.tc_bps_grid,
        net_returns: res.net_returns,
        turnover: res.turnover,
    })
}

/// MAP coefficients on the raw signals of the whole dataset. `nu=None` is the flat prior.
#[pyfunction]
#[pyo3(signature = (data, gamma=5.0, nu=None))]
fn fit_map(data: &PyDataset, gamma: f64, nu: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let d = &data.inner;
    let (k, l) = (d.n_assets(), d.n_signals());
    let w = Window::new(d.signals.as_view(), d.excess.as_view(), d.risk_free.as_view()).map_err(err)?;
    let prior = match nu {
        None => PriorSpec::flat(k, l),
        Some(nu) => PriorSpec::gaussian(DMatrix::zeros(k, l), nu).map_err(err)?,
    };
    let fit = estimation::solve_map(&w, &market_benchmark(k), &prior, gamma, &MapSolverConfig::default()).map_err(err)?;
    Ok(rows(&fit.policy.theta))
}

/// Projected policy weights `b + theta z`.
#[pyfunction]
#[pyo3(signature = (theta, z, benchmark=None, position_cap=None, gross_cap=None))]
fn policy_weights(
    theta: Vec<Vec<f64>>,
    z: Vec<f64>,
    benchmark: Option<Vec<f64>>,
    position_cap: Option<f64>,
    gross_cap: Option<f64>,
) -> PyResult<Vec<f64>> {
    let theta = matrix(&theta)?;
    let b = benchmark.map(DVector::from_vec).unwrap_or_else(|| market_benchmark(theta.nrows()));
    let policy = bppp::PolicyMatrix::new(theta, b).map_err(err)?;
    let d = ConstraintSet::default();
    let c = ConstraintSet::new(position_cap.unwrap_or(d.position_cap), gross_cap.unwrap_or(d.gross_cap)).map_err(err)?;
    let raw = bppp::policy::raw_weights(&policy, DVector::from_vec(z).as_view()).map_err(err)?;
    Ok(bppp::policy::project(&raw, &c).0.iter().copied().collect())
}

#[pyfunction]
fn sigma_theta(delta: f64, n_signals: usize) -> PyResult<f64> {
    estimation::sigma_theta(delta, n_signals).map_err(err)
}

#[pyfunction]
fn prior_variance(delta: f64, n_signals: usize, window_len: usize) -> PyResult<f64> {
    estimation::prior_variance(delta, n_signals, window_len).map_err(err)
}

#[pyfunction]
fn crra(r: f64, gamma: f64) -> PyResult<f64> {
    bppp::utility::crra(r, gamma).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (excess, annualization=12.0))]
fn sharpe(excess: Vec<f64>, annualization: f64) -> PyResult<f64> {
    analytics::sharpe(&excess, annualization).map_err(err)
}

#[pyfunction]
fn certainty_equivalent(returns: Vec<f64>, gamma: f64) -> PyResult<f64> {
    analytics::certainty_equivalent(&returns, gamma).map_err(err)
}

#[pyfunction]
fn apply_costs(gross: Vec<f64>, turnover: Vec<f64>, tc_bps: f64) -> PyResult<Vec<f64>> {
    backtest::apply_costs(&gross, &turnover, tc_bps).map_err(err)
}

/// Circular block bootstrap test of equal Sharpe ratios.
/// Returns `(diff, std_error, t_stat, p_value, block_length)`.
#[pyfunction]
#[pyo3(signature = (a, b, seed=0, n_boot=999))]
fn sharpe_diff_test(a: Vec<f64>, b: Vec<f64>, seed: u64, n_boot: usize) -> PyResult<(f64, f64, f64, f64, usize)> {
    let t = analytics::sharpe_diff_test(&a, &b, seed, n_boot).map_err(err)?;
    Ok((t.diff, t.std_error, t.t_stat, t.p_value, t.block_length))
}

/// Seeded estimation-risk checks as `(property, estimate, reference, std_error, passed)` rows.
#[pyfunction]
#[pyo3(signature = (seed=7, experiments=50))]
fn verify_theory(py: Python<'_>, seed: u64, experiments: usize) -> PyResult<Vec<(String, f64, f64, f64, bool)>> {
    let out = py.detach(|| bppp::theory::run_verification(seed, experiments)).map_err(err)?;
    Ok(out.into_iter().map(|r| (r.property, r.estimate, r.reference, r.std_error, r.passed)).collect())
}

#[pymodule]
fn bppp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBacktestResult>()?;
    m.add_function(wrap_pyfunction!(run_backtest, m)?)?;
    m.add_function(wrap_pyfunction!(fit_map, m)?)?;
    m.add_function(wrap_pyfunction!(policy_weights, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_theta, m)?)?;
    m.add_function(wrap_pyfunction!(prior_variance, m)?)?;
    m.add_function(wrap_pyfunction!(crra, m)?)?;
    m.add_function(wrap_pyfunction!(sharpe, m)?)?;
    m.add_function(wrap_pyfunction!(certainty_equivalent, m)?)?;
    m.add_function(wrap_pyfunction!(apply_costs, m)?)?;
    m.add_function(wrap_pyfunction!(sharpe_diff_test, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theory, m)?)?;
    Ok(())
}
