use super::*;
use crate::data::market_benchmark;
use crate::estimation::Window;
use nalgebra::dvector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn regularized_variance_examples() {
    let lam = DMatrix::from_element(1, 1, 2.0);
    assert!((regularized_variance(&lam, 0.5, 1.0)[(0, 0)] - 0.5).abs() < 1e-15);
    let slab = regularized_variance(&lam, 0.5, 1e8)[(0, 0)];
    assert!((slab - 1.0).abs() < 1e-12);
    assert_eq!(regularized_variance(&lam, 0.5, f64::INFINITY)[(0, 0)], 1.0);
    let sat = regularized_variance(&DMatrix::from_element(1, 1, 1e9), 1.0, 0.7)[(0, 0)];
    assert!((sat - 0.49).abs() < 1e-9 && sat < 0.49);
}

#[test]
fn tau_target_examples() {
    assert!((tau_pv(5.0, 10, 0.2, 16).unwrap() - 0.05).abs() < 1e-15);
    assert!((tau_pv(20.0, 242, 1.0, 400).unwrap() - 0.0045045045).abs() < 1e-9);
    assert_eq!(tau_pv(3.0, 10, 0.0, 50).unwrap(), 0.0);
    assert!(tau_pv(10.0, 10, 1.0, 50).is_err());
    assert!(tau_pv(0.0, 10, 1.0, 50).is_err());
}

#[test]
fn default_p0_is_admissible() {
    assert_eq!(default_p0(242), 24.2);
    assert_eq!(default_p0(50), 10.0);
    assert_eq!(default_p0(10), 1.0);
    for l in 1..300 {
        let p = default_p0(l);
        assert!(p > 0.0 && p < l as f64, "L={l}");
    }
}

fn state_with(lt2: f64, sigma2: f64) -> HorseshoeState {
    HorseshoeState {
        theta: DMatrix::zeros(1, 1),
        lambda: DMatrix::from_element(1, 1, lt2.sqrt()),
        tau: 1.0,
        sigma2,
        slab_c: f64::INFINITY,
        p0: 0.5,
        rho: 0.9,
    }
}

#[test]
fn kappa_limits() {
    let k = kappa(&state_with(1e-20, 1.0), &[3.0]).unwrap();
    assert!((k[(0, 0)] - 1.0).abs() < 1e-15);
    let k = kappa(&state_with(0.25, 2.0), &[8.0]).unwrap();
    assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
    assert!(kappa(&state_with(1.0, 1.0), &[1.0, 2.0]).is_err());
}

#[test]
fn kappa_summary() {
    let k = DMatrix::from_row_slice(1, 4, &[0.1, 0.2, 0.5, 0.9]);
    let s = summarize_kappa(&k);
    assert!((s.mean - 0.425).abs() < 1e-15);
    assert!((s.median - 0.35).abs() < 1e-15);
    assert_eq!(s.share_below_0_3, 0.5);
}

struct Panel {
    z: DMatrix<f64>,
    r: DMatrix<f64>,
    rf: DVector<f64>,
}

impl Panel {
    fn window(&self) -> Window<'_> {
        Window::new(self.z.as_view(), self.r.as_view(), self.rf.as_view()).unwrap()
    }
}

fn panel(t: usize, k: usize, l: usize, beta: f64, seed: u64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(t, l, |_, _| rng.random_range(-3f64.sqrt()..3f64.sqrt()));
    let r = DMatrix::from_fn(t, k, |s, j| {
        let signal = if j == 1 { beta * z[(s, 0)] } else { 0.0 };
        0.004 + signal + 0.04 * rng.sample::<f64, _>(StandardNormal)
    });
    Panel { z, r, rf: DVector::zeros(t) }
}

#[test]
fn laplace_variance_examples() {
    let p = panel(40, 2, 3, 0.0, 1);
    let w = p.window();
    let policy = PolicyMatrix::zeros(market_benchmark(2), 3).unwrap();
    let lt2 = DMatrix::from_element(2, 3, 0.3);
    let v = laplace_variances(&policy, &w, &lt2, 0.0).unwrap();
    assert!(v.iter().all(|x| (x - 0.3).abs() < 1e-15));
    let tiny = DMatrix::from_element(2, 3, 1e-14);
    let v = laplace_variances(&policy, &w, &tiny, 5.0).unwrap();
    assert!(v.amax() <= 1e-14);

    // one informative period: H / K^2 + 1/lt2 by hand
    let z = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
    let r = DMatrix::from_row_slice(2, 2, &[0.1, -0.1, 0.0, 0.0]);
    let rf = dvector![0.0, 0.0];
    let w = Window::new(z.as_view(), r.as_view(), rf.as_view()).unwrap();
    let policy = PolicyMatrix::zeros(dvector![0.5, 0.5], 1).unwrap();
    let v = laplace_variances(&policy, &w, &DMatrix::from_element(2, 1, 0.5), 3.0).unwrap();
    let h = 3.0 * 0.01 * 4.0; // r_p = 0, c = gamma
    assert!((v[(0, 0)] - 1.0 / (h / 4.0 + 2.0)).abs() < 1e-14);
    assert!((v[(1, 0)] - v[(0, 0)]).abs() < 1e-15);
}

#[test]
fn theta_step_matches_gaussian_map_in_slab_limit() {
    let p = panel(120, 2, 3, 0.01, 2);
    let w = p.window();
    let wb = market_benchmark(2);
    let mean = DMatrix::zeros(2, 3);
    let (lam, tau) = (1.5, 0.2);
    let hs = PriorSpec::Horseshoe {
        mean: mean.clone(),
        tau,
        lambda: DMatrix::from_element(2, 3, lam),
        slab_c: 1e12,
        sigma2: 0.01,
        p0: 1.0,
    };
    let nu = lam * lam * tau * tau;
    let g = PriorSpec::gaussian(mean, nu).unwrap();
    let cfg = MapSolverConfig { gradient_tolerance: 1e-10, ..Default::default() };
    let a = solve_map(&w, &wb, &hs, 5.0, &cfg).unwrap();
    let b = solve_map(&w, &wb, &g, 5.0, &cfg).unwrap();
    assert!((&a.policy.theta - &b.policy.theta).amax() < 1e-8);
}

#[test]
fn noise_returns_are_fully_shrunk() {
    let p = panel(240, 2, 5, 0.0, 3);
    let w = p.window();
    let mean = DMatrix::zeros(2, 5);
    let s0 = HorseshoeState::initial(&w, &mean, 1.0).unwrap();
    let fit = fit_horseshoe(&w, &market_benchmark(2), &mean, &s0, 5.0, &HorseshoeConfig::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.policy.theta.amax() < 1e-3, "{}", fit.policy.theta);
    let k = kappa(&fit.state, &signal_norms(&w)).unwrap();
    assert!(k.iter().all(|&x| x > 0.8 && x <= 1.0), "{k}");
    assert!(fit.state.lambda.iter().all(|&l| l >= 1.0));
}

#[test]
fn tau_stays_between_start_and_targets() {
    let p = panel(200, 2, 5, 0.0, 4);
    let w = p.window();
    let mean = DMatrix::zeros(2, 5);
    let mut s0 = HorseshoeState::initial(&w, &mean, 1.0).unwrap();
    s0.tau *= 3.0;
    let fit = fit_horseshoe(&w, &market_benchmark(2), &mean, &s0, 5.0, &HorseshoeConfig::default()).unwrap();
    let hi = fit.tau_path[0];
    assert!(fit.tau_path.windows(2).all(|p| p[1] <= p[0] + 1e-15));
    assert!(fit.tau_path.iter().all(|&t| t > 0.0 && t <= hi));
}

#[test]
fn converged_state_is_a_fixed_point() {
    let p = panel(240, 2, 4, 0.0, 5);
    let w = p.window();
    let mean = DMatrix::zeros(2, 4);
    let s0 = HorseshoeState::initial(&w, &mean, 1.0).unwrap();
    let cfg = HorseshoeConfig::default();
    let fit = fit_horseshoe(&w, &market_benchmark(2), &mean, &s0, 5.0, &cfg).unwrap();
    assert!(fit.converged);
    let again = fit_horseshoe(&w, &market_benchmark(2), &mean, &fit.state, 5.0, &cfg).unwrap();
    assert!((&again.policy.theta - &fit.policy.theta).amax() < cfg.tolerance);
}

#[test]
fn invalid_state_is_rejected() {
    let mut s = state_with(1.0, 1.0);
    s.slab_c = 1.0;
    s.rho = 1.0;
    assert!(s.validate().is_err());
    s.rho = 0.5;
    s.p0 = 1.0;
    assert!(s.validate().is_err());
}

#[test]
fn planted_signal_survives_while_noise_is_shrunk() {
    // survival needs sqrt(T) * beta * p0 / (L - p0) above one
    for seed in 0..4 {
        let p = panel(480, 2, 10, 0.2, 100 + seed);
        let w = p.window();
        let mean = DMatrix::zeros(2, 10);
        let s0 = HorseshoeState::initial(&w, &mean, 2.0).unwrap();
        let fit = fit_horseshoe(&w, &market_benchmark(2), &mean, &s0, 5.0, &HorseshoeConfig::default()).unwrap();
        let k = kappa(&fit.state, &signal_norms(&w)).unwrap();
        assert!(k[(1, 0)] < 0.5, "seed {seed}: {k}");
        let noise_above = k.iter().enumerate().filter(|(i, v)| *i != 1 && **v > 0.5).count();
        assert!(noise_above >= 18, "seed {seed}: {k}");
        assert!(k.iter().all(|&x| x > 0.0 && x <= 1.0));
    }
}

#[test]
fn linear_local_update_also_separates() {
    let p = panel(480, 2, 10, 0.1, 7);
    let w = p.window();
    let mean = DMatrix::zeros(2, 10);
    let s0 = HorseshoeState::initial(&w, &mean, 2.0).unwrap();
    let cfg = HorseshoeConfig { local_update: LocalUpdate::Linear, ..Default::default() };
    let fit = fit_horseshoe(&w, &market_benchmark(2), &mean, &s0, 5.0, &cfg).unwrap();
    let k = kappa(&fit.state, &signal_norms(&w)).unwrap();
    assert!(k[(1, 0)] < 0.5 && k[(1, 1)] > 0.5, "{k}");
}
