//! MAP estimation of the policy matrix, the diagonal Laplace approximation
//! and posterior-averaged portfolio weights.
//!
//! The objective is the *unaveraged* sum of CRRA utilities over the window
//! minus a Gaussian log-prior penalty,
//!
//! ```text
//! L(theta) = sum_s U(r_f + Pi(w_b + theta z_s)' R_s) - 1/2 sum_{k,l} (theta_kl - M_kl)^2 / v0_kl
//! ```
//!
//! where `v0 = nu` for the Gaussian prior and the regularised local variance
//! for the horseshoe prior. Gradients pass through the projection `Pi` with
//! the straight-through mask from [`crate::policy::project`].

pub mod lbfgs;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{ConstraintSet, PolicyMatrix, PosteriorApprox, PriorSpec};
use crate::error::{Error, Result};
use crate::policy::{project, MaskMode};
use crate::utility::Crra;

pub use lbfgs::{LbfgsConfig, LbfgsReport, Termination};

/// In-sample data for one estimation: standardised signals `z_s` paired with
/// next-month excess returns and risk-free rates.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub signals: DMatrixView<'a, f64>,
    pub excess: DMatrixView<'a, f64>,
    pub risk_free: DVectorView<'a, f64>,
    pub constraints: ConstraintSet,
    pub mask_mode: MaskMode,
}

impl<'a> Window<'a> {
    pub fn new(
        signals: DMatrixView<'a, f64>,
        excess: DMatrixView<'a, f64>,
        risk_free: DVectorView<'a, f64>,
    ) -> Result<Self> {
        let t = signals.nrows();
        if excess.nrows() != t || risk_free.len() != t {
            return Err(Error::Dimension(format!(
                "window rows disagree: signals {t}, returns {}, risk-free {}",
                excess.nrows(),
                risk_free.len()
            )));
        }
        if t < 2 {
            return Err(Error::Degenerate(format!("estimation window needs >= 2 rows, got {t}")));
        }
        Ok(Self {
            signals,
            excess,
            risk_free,
            constraints: ConstraintSet::default(),
            mask_mode: MaskMode::default(),
        })
    }

    pub fn with_constraints(mut self, constraints: ConstraintSet) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn with_mask_mode(mut self, mode: MaskMode) -> Self {
        self.mask_mode = mode;
        self
    }

    pub fn len(&self) -> usize {
        self.signals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_assets(&self) -> usize {
        self.excess.ncols()
    }

    pub fn n_signals(&self) -> usize {
        self.signals.ncols()
    }
}

/// Projected weights and gradient masks for every in-sample date.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSnapshot {
    /// Projected weights, `T x K`.
    pub weights: DMatrix<f64>,
    /// `true` where the gradient flows, `T x K`.
    pub active: DMatrix<bool>,
}

fn check_shapes(policy: &PolicyMatrix, window: &Window<'_>, prior: &PriorSpec) -> Result<()> {
    if policy.n_assets() != window.n_assets() || policy.n_signals() != window.n_signals() {
        return Err(Error::Dimension(format!(
            "theta is {}x{} but window has {} assets and {} signals",
            policy.n_assets(),
            policy.n_signals(),
            window.n_assets(),
            window.n_signals()
        )));
    }
    if prior.mean().shape() != policy.theta.shape() {
        return Err(Error::Dimension("prior mean shape differs from theta".into()));
    }
    prior.validate()
}

/// Projects the policy at every in-sample date and records the active sets.
pub fn mask_snapshot(theta: &DMatrix<f64>, benchmark: &DVector<f64>, window: &Window<'_>) -> MaskSnapshot {
    let t = window.len();
    let k = window.n_assets();
    let mut weights = DMatrix::zeros(t, k);
    let mut active = DMatrix::from_element(t, k, true);
    for s in 0..t {
        let raw = benchmark + theta * window.signals.row(s).transpose();
        let (w, mask) = project(&raw, &window.constraints);
        for j in 0..k {
            weights[(s, j)] = w[j];
            active[(s, j)] = match window.mask_mode {
                MaskMode::Untouched => mask[j],
                MaskMode::PassThrough => true,
            };
        }
    }
    MaskSnapshot { weights, active }
}

/// Portfolio return at each date for the frozen snapshot: active coordinates
/// follow `w_b + theta z_s`, inactive ones keep their projected value.
fn frozen_weights(
    theta: &DMatrix<f64>,
    benchmark: &DVector<f64>,
    window: &Window<'_>,
    snap: &MaskSnapshot,
    s: usize,
    frozen: bool,
) -> DVector<f64> {
    if !frozen {
        return snap.weights.row(s).transpose();
    }
    let raw = benchmark + theta * window.signals.row(s).transpose();
    DVector::from_fn(raw.len(), |j, _| {
        if snap.active[(s, j)] && window.mask_mode == MaskMode::Untouched {
            raw[j]
        } else {
            snap.weights[(s, j)]
        }
    })
}

struct Evaluation {
    value: f64,
    gradient: DMatrix<f64>,
}

/// Core evaluation. With `frozen = false` the snapshot must have been taken
/// at `theta` itself and the true objective is returned.
fn evaluate(
    theta: &DMatrix<f64>,
    benchmark: &DVector<f64>,
    window: &Window<'_>,
    prior_mean: &DMatrix<f64>,
    prior_precision: &DMatrix<f64>,
    utility: &Crra,
    snap: &MaskSnapshot,
    frozen: bool,
) -> Evaluation {
    let (k, l) = theta.shape();
    let mut value = 0.0;
    let mut gradient = DMatrix::zeros(k, l);
    for s in 0..window.len() {
        let w = frozen_weights(theta, benchmark, window, snap, s, frozen);
        let r_ex = window.excess.row(s);
        let rp = window.risk_free[s] + (0..k).map(|j| w[j] * r_ex[j]).sum::<f64>();
        value += utility.value_or_penalty(rp);
        let mu = utility.marginal_or_penalty(rp);
        for j in 0..k {
            if snap.active[(s, j)] {
                let scale = mu * r_ex[j];
                for c in 0..l {
                    gradient[(j, c)] += scale * window.signals[(s, c)];
                }
            }
        }
    }
    for (idx, th) in theta.iter().enumerate() {
        let prec = prior_precision[idx];
        if prec > 0.0 {
            let d = th - prior_mean[idx];
            value -= 0.5 * prec * d * d;
            gradient[idx] -= prec * d;
        }
    }
    Evaluation { value, gradient }
}

fn prior_parts(prior: &PriorSpec) -> (DMatrix<f64>, DMatrix<f64>) {
    (prior.mean().clone(), prior.precisions())
}

/// Penalised sample utility at `theta`.
pub fn objective(policy: &PolicyMatrix, window: &Window<'_>, prior: &PriorSpec, gamma: f64) -> Result<f64> {
    check_shapes(policy, window, prior)?;
    let utility = Crra::new(gamma)?;
    let snap = mask_snapshot(&policy.theta, &policy.benchmark, window);
    let (mean, prec) = prior_parts(prior);
    Ok(evaluate(&policy.theta, &policy.benchmark, window, &mean, &prec, &utility, &snap, false).value)
}

/// Straight-through gradient of [`objective`].
pub fn gradient(
    policy: &PolicyMatrix,
    window: &Window<'_>,
    prior: &PriorSpec,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    check_shapes(policy, window, prior)?;
    let utility = Crra::new(gamma)?;
    let snap = mask_snapshot(&policy.theta, &policy.benchmark, window);
    let (mean, prec) = prior_parts(prior);
    Ok(evaluate(&policy.theta, &policy.benchmark, window, &mean, &prec, &utility, &snap, false).gradient)
}

/// Objective with the projection's active set frozen at `snap`; smooth in
/// `theta`, and equal to [`objective`] at the point the snapshot was taken.
pub fn frozen_objective(
    policy: &PolicyMatrix,
    window: &Window<'_>,
    prior: &PriorSpec,
    gamma: f64,
    snap: &MaskSnapshot,
) -> Result<f64> {
    check_shapes(policy, window, prior)?;
    let utility = Crra::new(gamma)?;
    let (mean, prec) = prior_parts(prior);
    Ok(evaluate(&policy.theta, &policy.benchmark, window, &mean, &prec, &utility, snap, true).value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSolverConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub value_tolerance: f64,
    pub memory_pairs: usize,
    pub warm_start: Option<DMatrix<f64>>,
}

impl Default for MapSolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-12,
            value_tolerance: 2.2e-9,
            memory_pairs: 10,
            warm_start: None,
        }
    }
}

impl MapSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.gradient_tolerance > 0.0)
            || !(self.step_tolerance > 0.0)
            || !(self.value_tolerance >= 0.0)
        {
            return Err(Error::InvalidParameter(
                "solver needs max_iterations >= 1 and positive tolerances".into(),
            ));
        }
        if self.memory_pairs == 0 {
            return Err(Error::InvalidParameter("memory_pairs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MapSolution {
    pub policy: PolicyMatrix,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct MapProblem<'w, 'a> {
    window: &'w Window<'a>,
    benchmark: &'w DVector<f64>,
    mean: DMatrix<f64>,
    precision: DMatrix<f64>,
    utility: Crra,
    shape: (usize, usize),
    /// Diagonal preconditioner: the solver works in `u` with `theta = scale .* u`.
    scale: DVector<f64>,
}

impl MapProblem<'_, '_> {
    fn as_matrix(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let theta = u.component_mul(&self.scale);
        DMatrix::from_column_slice(self.shape.0, self.shape.1, theta.as_slice())
    }

    fn to_u(&self, theta: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_column_slice(theta.as_slice()).component_div(&self.scale)
    }
}

/// `1/sqrt(curvature)` per coefficient, using an unmasked curvature proxy
/// `max(gamma, 1) sum_s R_{s,k}^2 z_{s,l}^2` plus the prior precision.
fn preconditioner(window: &Window<'_>, precision: &DMatrix<f64>, gamma: f64) -> DVector<f64> {
    let (k, l) = precision.shape();
    let g = gamma.max(1.0);
    let mut h = precision.clone();
    for s in 0..window.len() {
        for j in 0..k {
            let r2 = window.excess[(s, j)] * window.excess[(s, j)];
            for c in 0..l {
                let z = window.signals[(s, c)];
                h[(j, c)] += g * r2 * z * z;
            }
        }
    }
    let floor = 1e-12 * h.amax().max(1e-300);
    DVector::from_iterator(k * l, h.iter().map(|v| 1.0 / v.max(floor).sqrt()))
}

impl lbfgs::Objective for MapProblem<'_, '_> {
    type Snapshot = MaskSnapshot;

    fn snapshot(&self, x: &DVector<f64>) -> MaskSnapshot {
        mask_snapshot(&self.as_matrix(x), self.benchmark, self.window)
    }

    fn evaluate(&self, x: &DVector<f64>, snap: &MaskSnapshot) -> (f64, DVector<f64>) {
        let theta = self.as_matrix(x);
        let e = evaluate(&theta, self.benchmark, self.window, &self.mean, &self.precision, &self.utility, snap, true);
        (-e.value, -DVector::from_column_slice(e.gradient.as_slice()).component_mul(&self.scale))
    }
}

/// Maximises the penalised objective with diagonally preconditioned L-BFGS;
/// masks are frozen within each line search and refreshed at accepted iterates.
/// The gradient tolerance applies to the preconditioned gradient.
pub fn solve_map(
    window: &Window<'_>,
    benchmark: &DVector<f64>,
    prior: &PriorSpec,
    gamma: f64,
    cfg: &MapSolverConfig,
) -> Result<MapSolution> {
    cfg.validate()?;
    let shape = (window.n_assets(), window.n_signals());
    let start = match &cfg.warm_start {
        Some(w) => w.clone(),
        None => prior.mean().clone(),
    };
    let start_policy = PolicyMatrix::new(start, benchmark.clone())?;
    check_shapes(&start_policy, window, prior)?;
    let (mean, precision) = prior_parts(prior);
    let scale = preconditioner(window, &precision, gamma);
    let problem = MapProblem { window, benchmark, mean, precision, utility: Crra::new(gamma)?, shape, scale };
    let x0 = problem.to_u(&start_policy.theta);
    {
        let snap = lbfgs::Objective::snapshot(&problem, &x0);
        let (f0, _) = lbfgs::Objective::evaluate(&problem, &x0, &snap);
        if !f0.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
    }
    let lcfg = LbfgsConfig {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: cfg.gradient_tolerance,
        step_tolerance: cfg.step_tolerance,
        value_tolerance: cfg.value_tolerance,
        memory: cfg.memory_pairs,
    };
    let report = lbfgs::minimize(&problem, x0, &lcfg);
    if !report.x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    Ok(MapSolution {
        policy: PolicyMatrix::new(problem.as_matrix(&report.x), benchmark.clone())?,
        objective: -report.value,
        gradient_norm: report.gradient_norm,
        iterations: report.iterations,
        converged: report.converged(),
    })
}

/// Per-coefficient data curvature `sum_s c(r_p,s) R_{s,k}^2 z_{s,l}^2 1{k active at s}`
/// at the given policy, with `c` the CRRA curvature.
pub fn data_curvature(policy: &PolicyMatrix, window: &Window<'_>, gamma: f64) -> Result<DMatrix<f64>> {
    let utility = Crra::new(gamma)?;
    let (k, l) = policy.theta.shape();
    if window.n_assets() != k || window.n_signals() != l {
        return Err(Error::Dimension("policy and window disagree".into()));
    }
    let snap = mask_snapshot(&policy.theta, &policy.benchmark, window);
    let mut h = DMatrix::zeros(k, l);
    for s in 0..window.len() {
        let r_ex = window.excess.row(s);
        let rp = window.risk_free[s] + (0..k).map(|j| snap.weights[(s, j)] * r_ex[j]).sum::<f64>();
        let c = utility.curvature_or_penalty(rp);
        if c == 0.0 {
            continue;
        }
        for j in 0..k {
            if snap.active[(s, j)] {
                let a = c * r_ex[j] * r_ex[j];
                for col in 0..l {
                    let z = window.signals[(s, col)];
                    h[(j, col)] += a * z * z;
                }
            }
        }
    }
    Ok(h)
}

/// Diagonal Laplace variances `1 / (data curvature + prior precision)`.
///
/// Horseshoe priors delegate to [`crate::horseshoe::laplace_variances`].
pub fn laplace_variances(
    theta_hat: &PolicyMatrix,
    window: &Window<'_>,
    prior: &PriorSpec,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    check_shapes(theta_hat, window, prior)?;
    match prior {
        PriorSpec::Gaussian { nu, .. } => {
            let h = data_curvature(theta_hat, window, gamma)?;
            Ok(h.map(|x| 1.0 / (x + 1.0 / nu)))
        }
        PriorSpec::Horseshoe { lambda, tau, slab_c, .. } => {
            let lt2 = crate::horseshoe::regularized_variance(lambda, *tau, *slab_c);
            crate::horseshoe::laplace_variances(theta_hat, window, &lt2, gamma)
        }
    }
}

/// Posterior-averaged weights: mean of projected weights over draws
/// `theta_hat + eps`, `eps_kl ~ N(0, v_kl)`, then projected once more.
pub fn bppp_weights(
    post: &PosteriorApprox,
    z: DVectorView<'_, f64>,
    constraints: &ConstraintSet,
    seed: u64,
) -> Result<DVector<f64>> {
    let policy = &post.map_point;
    let center = crate::policy::raw_weights(policy, z)?;
    let k = center.len();
    // For a fixed z the tilt noise of asset k is sum_l eps_kl z_l, which is
    // N(0, sum_l v_kl z_l^2); sampling it directly is exact and O(K) per draw.
    let tilt_sd: Vec<f64> = (0..k)
        .map(|j| {
            (0..z.len())
                .map(|c| post.variances[(j, c)] * z[c] * z[c])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = DVector::zeros(k);
    let mut draw = DVector::zeros(k);
    for _ in 0..post.draw_count {
        for j in 0..k {
            let e: f64 = StandardNormal.sample(&mut rng);
            draw[j] = center[j] + tilt_sd[j] * e;
        }
        let (w, _) = project(&draw, constraints);
        acc += w;
    }
    acc /= post.draw_count as f64;
    Ok(project(&acc, constraints).0)
}

/// Prior standard deviation per coefficient, `delta / sqrt(L)`.
pub fn sigma_theta(delta: f64, n_signals: usize) -> Result<f64> {
    if !(delta > 0.0) || n_signals == 0 {
        return Err(Error::InvalidParameter("calibration needs delta > 0 and L >= 1".into()));
    }
    Ok(delta / (n_signals as f64).sqrt())
}

/// Effective prior variance `sigma_theta^2 * max(T/L, 1)`.
pub fn prior_variance(delta: f64, n_signals: usize, window_len: usize) -> Result<f64> {
    let s = sigma_theta(delta, n_signals)?;
    let ratio = (window_len as f64 / n_signals as f64).max(1.0);
    Ok(s * s * ratio)
}

#[cfg(test)]
mod tests;
