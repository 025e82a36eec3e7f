//! Regularised horseshoe prior: coordinate ascent over `(theta, sigma2, tau, lambda)`,
//! shrinkage factors and the horseshoe Laplace variances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{PolicyMatrix, PriorSpec};
use crate::error::{Error, Result};
use crate::estimation::{data_curvature, solve_map, MapSolverConfig, Window};

pub const LAMBDA_FLOOR: f64 = 1e-6;
pub const TAU_FLOOR: f64 = 1e-8;
pub const SIGMA2_FLOOR: f64 = 1e-10;

/// `c^2 lambda^2 tau^2 / (c^2 + lambda^2 tau^2)` elementwise; `c = inf` gives `lambda^2 tau^2`.
pub fn regularized_variance(lambda: &DMatrix<f64>, tau: f64, slab_c: f64) -> DMatrix<f64> {
    lambda.map(|l| {
        let lt2 = l * l * tau * tau;
        if slab_c.is_infinite() {
            lt2
        } else {
            let c2 = slab_c * slab_c;
            c2 * lt2 / (c2 + lt2)
        }
    })
}

/// Global-scale target `p0/(L-p0) * sigma/sqrt(T)`.
pub fn tau_pv(p0: f64, n_signals: usize, sigma: f64, window_len: usize) -> Result<f64> {
    let l = n_signals as f64;
    if !(p0 > 0.0 && p0 < l) {
        return Err(Error::InvalidParameter(format!("p0 must lie in (0, {l}), got {p0}")));
    }
    if window_len == 0 || !(sigma >= 0.0) {
        return Err(Error::InvalidParameter("tau target needs T >= 1 and sigma >= 0".into()));
    }
    Ok(p0 / (l - p0) * sigma / (window_len as f64).sqrt())
}

/// Default expected number of active signals. `max(10, L/10)` is only
/// admissible for `L > 10`; smaller signal sets use `max(L/10, 0.5)`.
pub fn default_p0(n_signals: usize) -> f64 {
    let l = n_signals as f64;
    if n_signals > 10 {
        (l / 10.0).max(10.0)
    } else {
        (l / 10.0).max(0.5)
    }
}

/// How the local scales react to the current deviation `d = |theta - M| / (sigma tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalUpdate {
    /// `lambda^2 <- d + 1`
    #[default]
    Squared,
    /// `lambda <- d + 1`
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeState {
    pub theta: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub tau: f64,
    pub sigma2: f64,
    pub slab_c: f64,
    pub p0: f64,
    pub rho: f64,
}

impl HorseshoeState {
    /// Starting point: `theta = M`, unit local scales, `sigma2` the residual
    /// variance at `M` and `tau` at its target.
    pub fn initial(window: &Window<'_>, mean: &DMatrix<f64>, p0: f64) -> Result<Self> {
        let sigma2 = residual_variance(mean, window);
        let tau = tau_pv(p0, window.n_signals(), sigma2.sqrt(), window.len())?.max(TAU_FLOOR);
        let s = Self {
            theta: mean.clone(),
            lambda: DMatrix::from_element(mean.nrows(), mean.ncols(), 1.0),
            tau,
            sigma2,
            slab_c: 1.0,
            p0,
            rho: 0.9,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.theta.ncols() as f64;
        if self.lambda.shape() != self.theta.shape() {
            return Err(Error::Dimension("lambda and theta differ in shape".into()));
        }
        if self.lambda.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("local scales must be > 0".into()));
        }
        if !(self.tau > 0.0 && self.sigma2 > 0.0 && self.slab_c > 0.0) {
            return Err(Error::InvalidParameter("tau, sigma2 and slab_c must be > 0".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.p0 > 0.0 && self.p0 < l) {
            return Err(Error::InvalidParameter(format!("p0 must lie in (0, {l}), got {}", self.p0)));
        }
        Ok(())
    }

    pub fn local_variances(&self) -> DMatrix<f64> {
        regularized_variance(&self.lambda, self.tau, self.slab_c)
    }

    pub fn prior(&self, mean: &DMatrix<f64>) -> PriorSpec {
        PriorSpec::Horseshoe {
            mean: mean.clone(),
            tau: self.tau,
            lambda: self.lambda.clone(),
            slab_c: self.slab_c,
            sigma2: self.sigma2,
            p0: self.p0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeConfig {
    pub max_sweeps: usize,
    pub tolerance: f64,
    pub local_update: LocalUpdate,
    pub solver: MapSolverConfig,
}

impl Default for HorseshoeConfig {
    fn default() -> Self {
        Self { max_sweeps: 50, tolerance: 1e-5, local_update: LocalUpdate::default(), solver: MapSolverConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct HorseshoeFit {
    pub policy: PolicyMatrix,
    pub state: HorseshoeState,
    pub sweeps: usize,
    pub converged: bool,
    /// Every `tau` visited, starting with the initial value.
    pub tau_path: Vec<f64>,
}

/// Mean squared residual of the linear predictor `theta z_s` against the
/// realised excess returns, over all dates and assets.
pub fn residual_variance(theta: &DMatrix<f64>, window: &Window<'_>) -> f64 {
    let mut acc = 0.0;
    for s in 0..window.len() {
        let pred = theta * window.signals.row(s).transpose();
        for k in 0..window.n_assets() {
            let e = window.excess[(s, k)] - pred[k];
            acc += e * e;
        }
    }
    (acc / (window.len() * window.n_assets()) as f64).max(SIGMA2_FLOOR)
}

fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1.0)
}

/// Coordinate ascent for the regularised horseshoe MAP.
pub fn fit_horseshoe(
    window: &Window<'_>,
    benchmark: &DVector<f64>,
    mean: &DMatrix<f64>,
    state0: &HorseshoeState,
    gamma: f64,
    cfg: &HorseshoeConfig,
) -> Result<HorseshoeFit> {
    state0.validate()?;
    if mean.shape() != state0.theta.shape() {
        return Err(Error::Dimension("prior mean and state theta differ in shape".into()));
    }
    if cfg.max_sweeps == 0 || !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidParameter("horseshoe needs max_sweeps >= 1 and tolerance > 0".into()));
    }
    let n_signals = window.n_signals();
    let mut state = state0.clone();
    let mut tau_path = vec![state.tau];
    let mut policy = PolicyMatrix::new(state.theta.clone(), benchmark.clone())?;
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let solver = MapSolverConfig { warm_start: Some(state.theta.clone()), ..cfg.solver.clone() };
        let sol = solve_map(window, benchmark, &state.prior(mean), gamma, &solver)?;
        let theta = sol.policy.theta.clone();

        let sigma2 = residual_variance(&theta, window);
        let target = tau_pv(state.p0, n_signals, sigma2.sqrt(), window.len())?;
        let tau = (state.rho * state.tau + (1.0 - state.rho) * target).max(TAU_FLOOR);
        let scale = sigma2.sqrt() * tau;
        let lambda = DMatrix::from_fn(theta.nrows(), theta.ncols(), |k, l| {
            let d = (theta[(k, l)] - mean[(k, l)]).abs() / scale + 1.0;
            let lam = match cfg.local_update {
                LocalUpdate::Squared => d.sqrt(),
                LocalUpdate::Linear => d,
            };
            lam.max(LAMBDA_FLOOR)
        });
        debug_assert!(lambda.iter().all(|&l| l >= 1.0));

        let d_theta = (&theta - &state.theta).amax();
        let d_tau = rel_change(tau, state.tau);
        let d_lambda = lambda
            .iter()
            .zip(state.lambda.iter())
            .map(|(a, b)| rel_change(*a, *b))
            .fold(0.0, f64::max);

        state.theta = theta;
        state.sigma2 = sigma2;
        state.tau = tau;
        state.lambda = lambda;
        tau_path.push(tau);
        policy = sol.policy;

        if d_theta < cfg.tolerance && d_tau < cfg.tolerance && d_lambda < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("horseshoe coordinate ascent stopped after {sweeps} sweeps without converging");
    }
    Ok(HorseshoeFit { policy, state, sweeps, converged, tau_path })
}

/// Squared norm of each signal column over the window.
pub fn signal_norms(window: &Window<'_>) -> Vec<f64> {
    (0..window.n_signals()).map(|l| window.signals.column(l).norm_squared()).collect()
}

/// Shrinkage factors `1 / (1 + lambda~^2 ||z_l||^2 / sigma2)`.
pub fn kappa(state: &HorseshoeState, signal_norms: &[f64]) -> Result<DMatrix<f64>> {
    if signal_norms.len() != state.theta.ncols() {
        return Err(Error::Dimension(format!(
            "{} signal norms for {} signals",
            signal_norms.len(),
            state.theta.ncols()
        )));
    }
    let lt2 = state.local_variances();
    Ok(DMatrix::from_fn(lt2.nrows(), lt2.ncols(), |k, l| {
        1.0 / (1.0 + lt2[(k, l)] * signal_norms[l] / state.sigma2)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub mean: f64,
    pub median: f64,
    pub share_below_0_3: f64,
}

pub fn summarize_kappa(kappa: &DMatrix<f64>) -> KappaSummary {
    let mut v: Vec<f64> = kappa.iter().copied().collect();
    if v.is_empty() {
        return KappaSummary { mean: f64::NAN, median: f64::NAN, share_below_0_3: f64::NAN };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    KappaSummary {
        mean: v.iter().sum::<f64>() / n as f64,
        median,
        share_below_0_3: v.iter().filter(|&&x| x < 0.3).count() as f64 / n as f64,
    }
}

/// `v = 1 / (H / K^2 + 1/lambda~^2)`, where `H` is the data curvature at the MAP.
pub fn laplace_variances(
    theta_hat: &PolicyMatrix,
    window: &Window<'_>,
    local_variances: &DMatrix<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    if local_variances.shape() != theta_hat.theta.shape() {
        return Err(Error::Dimension("local variances must match theta".into()));
    }
    let h = data_curvature(theta_hat, window, gamma)?;
    let k2 = (theta_hat.n_assets() * theta_hat.n_assets()) as f64;
    Ok(h.zip_map(local_variances, |h, lt2| 1.0 / (h / k2 + 1.0 / lt2)))
}

pub fn horseshoe_laplace_variances(
    theta_hat: &PolicyMatrix,
    window: &Window<'_>,
    state: &HorseshoeState,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    laplace_variances(theta_hat, window, &state.local_variances(), gamma)
}

#[cfg(test)]
mod tests;
