//! Monte-Carlo checks of the estimation-risk results: the Jensen gap
//! `G(m) - E[G(theta)] > 0`, its second-order trace approximation and the
//! total-variance decomposition of the policy return.
//!
//! Policies here are unconstrained, `w(theta) = w_b + theta z`, and the
//! return is `w'R` with no risk-free leg.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::utility::{Crra, Quadratic, Utility};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TheoryUtility {
    Crra(f64),
    Quadratic(f64),
}

impl TheoryUtility {
    pub fn gamma(&self) -> f64 {
        match *self {
            Self::Crra(g) | Self::Quadratic(g) => g,
        }
    }
}

impl Utility for TheoryUtility {
    fn value(&self, r: f64) -> f64 {
        match *self {
            Self::Crra(g) => Crra { gamma: g }.value(r),
            Self::Quadratic(g) => Quadratic { gamma: g }.value(r),
        }
    }

    fn marginal(&self, r: f64) -> f64 {
        match *self {
            Self::Crra(g) => Crra { gamma: g }.marginal(r),
            Self::Quadratic(g) => Quadratic { gamma: g }.marginal(r),
        }
    }

    fn curvature(&self, r: f64) -> f64 {
        match *self {
            Self::Crra(g) => Crra { gamma: g }.curvature(r),
            Self::Quadratic(g) => Quadratic { gamma: g }.curvature(r),
        }
    }
}

/// Distribution of next-period returns.
#[derive(Debug, Clone, PartialEq)]
pub enum ReturnModel {
    /// Joint scenarios, one row per atom, with probabilities.
    FiniteSupport { atoms: DMatrix<f64>, probs: DVector<f64> },
    /// Gaussian returns; expectations use a fixed set of `inner_draws` seeded draws.
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64>, inner_draws: usize, seed: u64 },
}

impl ReturnModel {
    pub fn n_assets(&self) -> usize {
        match self {
            Self::FiniteSupport { atoms, .. } => atoms.ncols(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FiniteSupport { atoms, probs } => {
                if atoms.nrows() != probs.len() || atoms.nrows() == 0 {
                    return Err(Error::Dimension("one probability per atom required".into()));
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.sum() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter("atom probabilities must be >= 0 and sum to 1".into()));
                }
            }
            Self::Gaussian { mean, cov, inner_draws, .. } => {
                if cov.shape() != (mean.len(), mean.len()) {
                    return Err(Error::Dimension("return covariance must be K x K".into()));
                }
                if *inner_draws == 0 {
                    return Err(Error::InvalidParameter("inner_draws must be >= 1".into()));
                }
                psd_sqrt(cov)?;
            }
        }
        Ok(())
    }

    /// Scenarios and weights used for expectations over `R`.
    pub fn scenarios(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        match self {
            Self::FiniteSupport { atoms, probs } => Ok((atoms.clone(), probs.clone())),
            Self::Gaussian { mean, cov, inner_draws, seed } => {
                let root = psd_sqrt(cov)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let k = mean.len();
                let mut atoms = DMatrix::zeros(*inner_draws, k);
                for i in 0..*inner_draws {
                    let e = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                    atoms.set_row(i, &(mean + &root * e).transpose());
                }
                Ok((atoms, DVector::from_element(*inner_draws, 1.0 / *inner_draws as f64)))
            }
        }
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        match self {
            Self::FiniteSupport { atoms, probs } => Ok(atoms.transpose() * probs),
            Self::Gaussian { mean, .. } => Ok(mean.clone()),
        }
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        match self {
            Self::FiniteSupport { atoms, probs } => {
                let mu = atoms.transpose() * probs;
                let mut c = DMatrix::zeros(mu.len(), mu.len());
                for (i, p) in probs.iter().enumerate() {
                    let d = atoms.row(i).transpose() - &mu;
                    c += &d * d.transpose() * *p;
                }
                Ok(c)
            }
            Self::Gaussian { cov, .. } => Ok(cov.clone()),
        }
    }

    /// `E ||R||^2`.
    pub fn second_moment(&self) -> Result<f64> {
        Ok(self.covariance()?.trace() + self.mean()?.norm_squared())
    }
}

/// Posterior covariance of `vec(theta)` (column-major, asset index fastest).
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorCov {
    Isotropic(f64),
    Full(DMatrix<f64>),
}

/// Symmetric square root of a PSD matrix; small negative eigenvalues are clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    if (m - m.transpose()).amax() > 1e-10 * m.amax().max(1.0) {
        return Err(Error::InvalidParameter("covariance must be symmetric".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let tol = 1e-10 * eig.eigenvalues.amax().max(1e-300);
    if eig.eigenvalues.iter().any(|&v| v < -tol) {
        return Err(Error::InvalidParameter("covariance must be positive semidefinite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum McScheme {
    /// Independent draws.
    Plain,
    /// Pairs `m +- e`; each pair's gap is non-negative for concave `G`.
    #[default]
    Antithetic,
    /// Antithetic pairs minus the quadratic term `-1/2 e'He`, whose mean is known.
    ControlVariate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapExperiment {
    pub mean: DMatrix<f64>,
    pub cov: PosteriorCov,
    pub z: DVector<f64>,
    pub benchmark: DVector<f64>,
    pub returns: ReturnModel,
    pub utility: TheoryUtility,
    pub mc_draws: usize,
    pub scheme: McScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEstimate {
    pub gap: f64,
    pub std_error: f64,
    pub draws: usize,
}

impl GapExperiment {
    pub fn validate(&self) -> Result<()> {
        let (k, l) = self.mean.shape();
        if self.z.len() != l || self.benchmark.len() != k || self.returns.n_assets() != k {
            return Err(Error::Dimension("experiment dimensions disagree".into()));
        }
        if self.mc_draws < 1000 {
            return Err(Error::InvalidParameter(format!("mc_draws must be >= 1000, got {}", self.mc_draws)));
        }
        match &self.cov {
            PosteriorCov::Isotropic(s) => {
                if !(*s >= 0.0) {
                    return Err(Error::InvalidParameter("isotropic variance must be >= 0".into()));
                }
            }
            PosteriorCov::Full(c) => {
                if c.shape() != (k * l, k * l) {
                    return Err(Error::Dimension("posterior covariance must be KL x KL".into()));
                }
                psd_sqrt(c)?;
            }
        }
        self.returns.validate()
    }

    fn n_params(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.cov {
            PosteriorCov::Isotropic(s) => DMatrix::identity(self.n_params(), self.n_params()) * *s,
            PosteriorCov::Full(c) => c.clone(),
        }
    }

    /// Same experiment with the posterior covariance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let cov = match &self.cov {
            PosteriorCov::Isotropic(s) => PosteriorCov::Isotropic(s * factor),
            PosteriorCov::Full(c) => PosteriorCov::Full(c * factor),
        };
        Self { cov, ..self.clone() }
    }
}

/// `G(theta) = E_R[U((w_b + theta z)'R)]` over precomputed scenarios.
struct Evaluator<'a> {
    exp: &'a GapExperiment,
    atoms: DMatrix<f64>,
    probs: DVector<f64>,
    /// `atoms * w_b`
    base: DVector<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(exp: &'a GapExperiment) -> Result<Self> {
        let (atoms, probs) = exp.returns.scenarios()?;
        let base = &atoms * &exp.benchmark;
        Ok(Self { exp, atoms, probs, base })
    }

    /// `G` at `m + delta`, where `delta` is a perturbation of `vec(theta)`.
    fn g_at(&self, delta: Option<&DVector<f64>>) -> f64 {
        let k = self.exp.benchmark.len();
        let mut tilt = &self.exp.mean * &self.exp.z;
        if let Some(d) = delta {
            let d = DMatrix::from_column_slice(k, self.exp.z.len(), d.as_slice());
            tilt += d * &self.exp.z;
        }
        let r = &self.base + &self.atoms * tilt;
        r.iter().zip(self.probs.iter()).map(|(r, p)| p * self.exp.utility.value(*r)).sum()
    }

    fn portfolio_returns(&self) -> DVector<f64> {
        &self.base + &self.atoms * (&self.exp.mean * &self.exp.z)
    }
}

/// Hessian of `G` at the posterior mean, `-E[c(r_p) (z kron R)(z kron R)']`.
pub fn hessian(exp: &GapExperiment) -> Result<DMatrix<f64>> {
    exp.validate()?;
    let ev = Evaluator::new(exp)?;
    let rp = ev.portfolio_returns();
    let (k, l) = exp.mean.shape();
    let mut h = DMatrix::zeros(k * l, k * l);
    for i in 0..ev.atoms.nrows() {
        let c = exp.utility.curvature(rp[i]);
        let a = DVector::from_fn(k * l, |idx, _| ev.atoms[(i, idx % k)] * exp.z[idx / k]);
        h -= &a * a.transpose() * (ev.probs[i] * c);
    }
    Ok(h)
}

/// `-1/2 tr(H Sigma)`.
pub fn gap_second_order(exp: &GapExperiment) -> Result<f64> {
    let h = hessian(exp)?;
    Ok(-0.5 * (h * exp.cov_matrix()).trace())
}

/// Quadratic-utility gap `(gamma/2) z'Sigma z E||R||^2` for `Sigma = sigma2 I`.
pub fn quadratic_gap_closed_form(gamma: f64, sigma2: f64, z: &DVector<f64>, returns: &ReturnModel) -> Result<f64> {
    Ok(0.5 * gamma * sigma2 * z.norm_squared() * returns.second_moment()?)
}

/// Monte-Carlo estimate of `G(m) - E[G(theta)]` with its standard error.
pub fn jensen_gap_mc(exp: &GapExperiment, seed: u64) -> Result<GapEstimate> {
    exp.validate()?;
    let ev = Evaluator::new(exp)?;
    let root = match &exp.cov {
        PosteriorCov::Isotropic(s) => DMatrix::identity(exp.n_params(), exp.n_params()) * s.sqrt(),
        PosteriorCov::Full(c) => psd_sqrt(c)?,
    };
    let g_mean = ev.g_at(None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = exp.n_params();
    let draw = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &root * e
    };

    let samples: Vec<f64> = match exp.scheme {
        McScheme::Plain => (0..exp.mc_draws).map(|_| g_mean - ev.g_at(Some(&draw(&mut rng)))).collect(),
        McScheme::Antithetic | McScheme::ControlVariate => {
            let pairs = (exp.mc_draws / 2).max(1);
            let (h, trace_term) = if exp.scheme == McScheme::ControlVariate {
                let h = hessian(exp)?;
                let t = -0.5 * (&h * exp.cov_matrix()).trace();
                (Some(h), t)
            } else {
                (None, 0.0)
            };
            (0..pairs)
                .map(|_| {
                    let e = draw(&mut rng);
                    let up = ev.g_at(Some(&e));
                    let down = ev.g_at(Some(&(-&e)));
                    let d = g_mean - 0.5 * (up + down);
                    match &h {
                        // d ~ -1/2 e'He to second order, and E[-1/2 e'He] is the trace term
                        Some(h) => d + 0.5 * e.dot(&(h * &e)) + trace_term,
                        None => d,
                    }
                })
                .collect()
        }
    };
    let (mean, se) = mean_and_se(&samples);
    Ok(GapEstimate { gap: mean, std_error: se, draws: samples.len() })
}

fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderStep {
    pub scale: f64,
    pub mc_gap: f64,
    pub approximation: f64,
    pub error: f64,
}

/// Gap versus trace approximation as `Sigma` is halved `steps - 1` times,
/// using common random numbers at every rung.
pub fn scaling_ladder(exp: &GapExperiment, seed: u64, steps: usize) -> Result<Vec<LadderStep>> {
    let mut out = Vec::with_capacity(steps);
    let mut scale = 1.0;
    for _ in 0..steps {
        let e = exp.scaled(scale);
        let est = jensen_gap_mc(&e, seed)?;
        let approx = gap_second_order(&e)?;
        out.push(LadderStep { scale, mc_gap: est.gap, approximation: approx, error: (est.gap - approx).abs() });
        scale *= 0.5;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    /// Sample variance of `r_p` over joint `(theta, R)` draws.
    pub total: f64,
    /// Mean over `theta` draws of the exact conditional variance `Var(r_p | theta)`.
    pub market: f64,
    /// `z'Sigma z ||mu||^2`, exact.
    pub estimation: f64,
    pub residual: f64,
    pub std_error: f64,
}

/// Checks `Var(r_p) = E[Var(r_p|theta)] + z'Sigma z ||mu||^2` for an isotropic posterior.
pub fn variance_decomposition_check(exp: &GapExperiment, seed: u64) -> Result<VarianceDecomposition> {
    exp.validate()?;
    let PosteriorCov::Isotropic(s2) = exp.cov else {
        return Err(Error::InvalidParameter("variance decomposition needs an isotropic posterior".into()));
    };
    let (k, l) = exp.mean.shape();
    let mu = exp.returns.mean()?;
    let cov_r = exp.returns.covariance()?;
    let estimation = s2 * exp.z.norm_squared() * mu.norm_squared();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = ReturnSampler::new(&exp.returns)?;
    let n = exp.mc_draws;
    let mut r = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let sd = s2.sqrt();
    for _ in 0..n {
        let eps = DMatrix::from_fn(k, l, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let w = &exp.benchmark + (&exp.mean + eps) * &exp.z;
        let ret = sampler.sample(&mut rng);
        r.push(w.dot(&ret));
        q.push((w.transpose() * &cov_r * &w)[(0, 0)]);
    }
    let nf = n as f64;
    let r_bar = r.iter().sum::<f64>() / nf;
    let per: Vec<f64> = r
        .iter()
        .zip(q.iter())
        .map(|(ri, qi)| (ri - r_bar).powi(2) * nf / (nf - 1.0) - qi - estimation)
        .collect();
    let (residual, se) = mean_and_se(&per);
    let total = r.iter().map(|ri| (ri - r_bar).powi(2)).sum::<f64>() / (nf - 1.0);
    let market = q.iter().sum::<f64>() / nf;
    Ok(VarianceDecomposition { total, market, estimation, residual, std_error: se })
}

enum ReturnSampler {
    Atoms { atoms: DMatrix<f64>, index: WeightedIndex<f64> },
    Gaussian { mean: DVector<f64>, root: DMatrix<f64> },
}

impl ReturnSampler {
    fn new(model: &ReturnModel) -> Result<Self> {
        match model {
            ReturnModel::FiniteSupport { atoms, probs } => Ok(Self::Atoms {
                atoms: atoms.clone(),
                index: WeightedIndex::new(probs.iter().copied())
                    .map_err(|e| Error::InvalidParameter(format!("atom probabilities: {e}")))?,
            }),
            ReturnModel::Gaussian { mean, cov, .. } => Ok(Self::Gaussian { mean: mean.clone(), root: psd_sqrt(cov)? }),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            Self::Atoms { atoms, index } => atoms.row(index.sample(rng)).transpose(),
            Self::Gaussian { mean, root } => {
                let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                mean + root * e
            }
        }
    }
}

/// Random finite-support experiment used by the verification suite: returns
/// with `atoms` joint scenarios of modest size so that `1 + r_p` stays positive.
pub fn random_experiment(
    k: usize,
    l: usize,
    atoms: usize,
    utility: TheoryUtility,
    sigma2: f64,
    mc_draws: usize,
    rng: &mut impl Rng,
) -> GapExperiment {
    let scen = DMatrix::from_fn(atoms, k, |_, _| 0.01 + 0.05 * rng.sample::<f64, _>(StandardNormal));
    let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let probs = DVector::from_iterator(atoms, raw.iter().map(|p| p / total));
    let mut benchmark = DVector::zeros(k);
    benchmark[0] = 1.0;
    GapExperiment {
        mean: DMatrix::from_fn(k, l, |_, _| rng.random_range(-0.1..0.1)),
        cov: PosteriorCov::Isotropic(sigma2),
        z: DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal)),
        benchmark,
        returns: ReturnModel::FiniteSupport { atoms: scen, probs },
        utility,
        mc_draws,
        scheme: McScheme::Antithetic,
    }
}

/// One row of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationRow {
    pub property: String,
    pub estimate: f64,
    pub reference: f64,
    pub std_error: f64,
    pub passed: bool,
}

/// Runs the standard battery of checks with seeded experiments.
pub fn run_verification(seed: u64, experiments: usize) -> Result<Vec<VerificationRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    let mut positive = 0;
    for i in 0..experiments {
        let gamma = rng.random_range(1.0..10.0);
        let sigma2 = rng.random_range(0.005..0.05);
        let exp = random_experiment(3, 4, 8, TheoryUtility::Crra(gamma), sigma2, 2000, &mut rng);
        let est = jensen_gap_mc(&exp, seed.wrapping_add(i as u64))?;
        if est.gap > 0.0 {
            positive += 1;
        }
    }
    rows.push(VerificationRow {
        property: format!("gap > 0 in {experiments} concave experiments"),
        estimate: positive as f64,
        reference: experiments as f64,
        std_error: 0.0,
        passed: positive == experiments,
    });

    let base = random_experiment(3, 4, 8, TheoryUtility::Crra(5.0), 0.02, 2000, &mut rng);
    let zero = jensen_gap_mc(&base.scaled(0.0), seed)?;
    rows.push(VerificationRow {
        property: "gap = 0 at zero posterior covariance".into(),
        estimate: zero.gap,
        reference: 0.0,
        std_error: zero.std_error,
        passed: zero.gap == 0.0,
    });

    let linear = GapExperiment { utility: TheoryUtility::Crra(0.0), scheme: McScheme::Plain, mc_draws: 20_000, ..base.clone() };
    let lin = jensen_gap_mc(&linear, seed)?;
    rows.push(VerificationRow {
        property: "gap = 0 within 3 SE at gamma = 0".into(),
        estimate: lin.gap,
        reference: 0.0,
        std_error: lin.std_error,
        passed: lin.gap.abs() <= 3.0 * lin.std_error.max(f64::EPSILON),
    });

    let quad = GapExperiment { utility: TheoryUtility::Quadratic(5.0), scheme: McScheme::Plain, mc_draws: 20_000, ..base.clone() };
    let q = jensen_gap_mc(&quad, seed)?;
    let closed = quadratic_gap_closed_form(5.0, 0.02, &quad.z, &quad.returns)?;
    rows.push(VerificationRow {
        property: "quadratic gap matches (gamma/2) z'Sz E||R||^2".into(),
        estimate: q.gap,
        reference: closed,
        std_error: q.std_error,
        passed: (q.gap - closed).abs() <= 3.0 * q.std_error,
    });

    let cv = GapExperiment { scheme: McScheme::ControlVariate, mc_draws: 4000, ..base.clone() };
    let ladder = scaling_ladder(&cv, seed, 3)?;
    let ratios: Vec<f64> = ladder.windows(2).map(|w| w[0].error / w[1].error).collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    rows.push(VerificationRow {
        property: "trace-approximation error ratio when Sigma halves".into(),
        estimate: min_ratio,
        reference: 3.0,
        std_error: 0.0,
        passed: min_ratio >= 3.0,
    });

    let vd_exp = GapExperiment { mc_draws: 200_000, ..base };
    let vd = variance_decomposition_check(&vd_exp, seed)?;
    rows.push(VerificationRow {
        property: "total variance = market + estimation term".into(),
        estimate: vd.total,
        reference: vd.market + vd.estimation,
        std_error: vd.std_error,
        passed: vd.residual.abs() <= 3.0 * vd.std_error,
    });
    Ok(rows)
}
