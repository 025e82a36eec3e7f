use super::*;
use crate::data::market_benchmark;
use crate::utility::crra;
use nalgebra::dvector;
use rand::Rng;

struct Sample {
    z: DMatrix<f64>,
    r: DMatrix<f64>,
    rf: DVector<f64>,
}

fn sample(t: usize, k: usize, l: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(t, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let r = DMatrix::from_fn(t, k, |s, j| 0.005 + 0.01 * z[(s, j % l)] + 0.04 * rng.sample::<f64, _>(StandardNormal));
    let rf = DVector::from_fn(t, |_, _| rng.random_range(0.0..0.003));
    Sample { z, r, rf }
}

impl Sample {
    fn window(&self) -> Window<'_> {
        Window::new(self.z.as_view(), self.r.as_view(), self.rf.as_view()).unwrap()
    }
}

#[test]
fn objective_is_sum_of_utilities_minus_penalty() {
    let d = sample(30, 3, 2, 1);
    let w = d.window();
    let theta = DMatrix::from_row_slice(3, 2, &[0.1, -0.05, 0.0, 0.2, -0.1, 0.05]);
    let policy = PolicyMatrix::new(theta.clone(), market_benchmark(3)).unwrap();
    let mean = DMatrix::from_element(3, 2, 0.01);
    let nu = 0.3;
    let prior = PriorSpec::gaussian(mean.clone(), nu).unwrap();

    let mut oracle = 0.0;
    for s in 0..30 {
        let raw = market_benchmark(3) + &theta * d.z.row(s).transpose();
        let (wp, _) = project(&raw, &ConstraintSet::default());
        let rp = d.rf[s] + wp.dot(&d.r.row(s).transpose());
        oracle += crra(rp, 5.0).unwrap();
    }
    oracle -= (&theta - &mean).norm_squared() / (2.0 * nu);
    let got = objective(&policy, &w, &prior, 5.0).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");

    let flat = PriorSpec::flat(3, 2);
    let got_flat = objective(&policy, &w, &flat, 5.0).unwrap();
    assert!((got_flat - oracle - (&theta - &mean).norm_squared() / (2.0 * nu)).abs() < 1e-12);
}

#[test]
fn gradient_matches_frozen_central_differences() {
    for seed in 0..5 {
        let d = sample(40, 3, 4, 10 + seed);
        let w = d.window();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // big enough to hit the position caps on some dates
        let theta = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-0.4..0.4));
        let policy = PolicyMatrix::new(theta.clone(), market_benchmark(3)).unwrap();
        let prior = PriorSpec::gaussian(DMatrix::from_element(3, 4, 0.05), 0.5).unwrap();
        let g = gradient(&policy, &w, &prior, 5.0).unwrap();
        let snap = mask_snapshot(&theta, &policy.benchmark, &w);
        let h = 1e-6;
        let mut fd = DMatrix::zeros(3, 4);
        for i in 0..12 {
            let mut p = theta.clone();
            p[i] += h;
            let up = frozen_objective(&PolicyMatrix::new(p.clone(), policy.benchmark.clone()).unwrap(), &w, &prior, 5.0, &snap).unwrap();
            p[i] -= 2.0 * h;
            let dn = frozen_objective(&PolicyMatrix::new(p, policy.benchmark.clone()).unwrap(), &w, &prior, 5.0, &snap).unwrap();
            fd[i] = (up - dn) / (2.0 * h);
        }
        let rel = (&g - &fd).amax() / g.amax();
        assert!(rel < 1e-6, "seed {seed}: rel {rel}\n{g}\n{fd}");
    }
}

#[test]
fn frozen_objective_agrees_at_snapshot_point() {
    let d = sample(25, 2, 3, 3);
    let w = d.window();
    let policy = PolicyMatrix::new(DMatrix::from_element(2, 3, 0.3), dvector![0.5, 0.5]).unwrap();
    let prior = PriorSpec::flat(2, 3);
    let snap = mask_snapshot(&policy.theta, &policy.benchmark, &w);
    let a = objective(&policy, &w, &prior, 3.0).unwrap();
    let b = frozen_objective(&policy, &w, &prior, 3.0, &snap).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn map_solution_is_stationary() {
    let d = sample(120, 3, 2, 4);
    let w = d.window();
    let prior = PriorSpec::gaussian(DMatrix::zeros(3, 2), 0.05).unwrap();
    let sol = solve_map(&w, &market_benchmark(3), &prior, 5.0, &MapSolverConfig::default()).unwrap();
    assert!(sol.converged);
    let g = gradient(&sol.policy, &w, &prior, 5.0).unwrap();
    assert!(g.amax() < 1e-5, "{g}");
    // the MAP beats the prior mean
    let at_mean = objective(&PolicyMatrix::zeros(market_benchmark(3), 2).unwrap(), &w, &prior, 5.0).unwrap();
    assert!(sol.objective >= at_mean);
}

#[test]
fn tight_prior_pins_the_mean() {
    let d = sample(60, 2, 3, 5);
    let w = d.window();
    let mean = DMatrix::from_element(2, 3, 0.02);
    let prior = PriorSpec::gaussian(mean.clone(), 1e-10).unwrap();
    let sol = solve_map(&w, &market_benchmark(2), &prior, 5.0, &MapSolverConfig::default()).unwrap();
    assert!((&sol.policy.theta - &mean).amax() < 1e-6);
}

#[test]
fn warm_start_at_optimum_stays() {
    let d = sample(100, 2, 2, 6);
    let w = d.window();
    let prior = PriorSpec::gaussian(DMatrix::zeros(2, 2), 0.1).unwrap();
    let cfg = MapSolverConfig { gradient_tolerance: 1e-9, ..Default::default() };
    let a = solve_map(&w, &market_benchmark(2), &prior, 5.0, &cfg).unwrap();
    let cfg2 = MapSolverConfig { warm_start: Some(a.policy.theta.clone()), ..cfg };
    let b = solve_map(&w, &market_benchmark(2), &prior, 5.0, &cfg2).unwrap();
    assert!((&a.policy.theta - &b.policy.theta).amax() < 1e-7);
}

#[test]
fn solver_rejects_bad_shapes_and_config() {
    let d = sample(30, 2, 2, 7);
    let w = d.window();
    let prior = PriorSpec::flat(3, 2);
    assert!(solve_map(&w, &market_benchmark(2), &prior, 5.0, &MapSolverConfig::default()).is_err());
    let cfg = MapSolverConfig { max_iterations: 0, ..Default::default() };
    assert!(solve_map(&w, &market_benchmark(2), &PriorSpec::flat(2, 2), 5.0, &cfg).is_err());
}

#[test]
fn laplace_variances_reduce_to_prior_without_curvature() {
    let d = sample(50, 2, 3, 8);
    let w = d.window();
    let policy = PolicyMatrix::zeros(market_benchmark(2), 3).unwrap();
    let prior = PriorSpec::gaussian(DMatrix::zeros(2, 3), 0.07).unwrap();
    let v = laplace_variances(&policy, &w, &prior, 0.0).unwrap();
    assert!(v.iter().all(|x| (x - 0.07).abs() < 1e-15));
}

#[test]
fn laplace_variance_single_period_by_hand() {
    let z = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
    let r = DMatrix::from_row_slice(2, 1, &[0.1, 0.0]);
    let rf = dvector![0.0, 0.0];
    let w = Window::new(z.as_view(), r.as_view(), rf.as_view()).unwrap();
    let policy = PolicyMatrix::new(DMatrix::from_element(1, 1, -0.25), dvector![1.0]).unwrap();
    let prior = PriorSpec::gaussian(DMatrix::zeros(1, 1), 4.0).unwrap();
    let v = laplace_variances(&policy, &w, &prior, 2.0).unwrap();
    // w = 1 - 0.25 * 2 = 0.5, r_p = 0.05, c = 2 * 1.05^-3, H = c * 0.01 * 4 + 0.25
    let h = 2.0 * 1.05f64.powf(-3.0) * 0.01 * 4.0 + 0.25;
    assert!((v[(0, 0)] - 1.0 / h).abs() < 1e-14);
}

#[test]
fn bppp_weights_collapse_without_variance() {
    let theta = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]);
    let policy = PolicyMatrix::new(theta, dvector![0.5, 0.5]).unwrap();
    let post = PosteriorApprox::new(policy.clone(), DMatrix::zeros(2, 2), 50).unwrap();
    let z = dvector![1.0, 0.5];
    let w = bppp_weights(&post, z.as_view(), &ConstraintSet::default(), 1).unwrap();
    let expected = project(&crate::policy::raw_weights(&policy, z.as_view()).unwrap(), &ConstraintSet::default()).0;
    assert_eq!(w, expected);
}

#[test]
fn bppp_weights_are_seeded_and_feasible() {
    let policy = PolicyMatrix::new(DMatrix::from_element(3, 2, 0.2), market_benchmark(3)).unwrap();
    let post = PosteriorApprox::new(policy, DMatrix::from_element(3, 2, 0.5), 500).unwrap();
    let z = dvector![1.5, -0.7];
    let c = ConstraintSet::default();
    let a = bppp_weights(&post, z.as_view(), &c, 42).unwrap();
    let b = bppp_weights(&post, z.as_view(), &c, 42).unwrap();
    let other = bppp_weights(&post, z.as_view(), &c, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, other);
    assert!(a.iter().all(|x| x.abs() <= 0.6 + 1e-12));
    assert!(a.iter().map(|x| x.abs()).sum::<f64>() <= 2.0 + 1e-12);
}

#[test]
fn posterior_averaging_shrinks_capped_tilts() {
    // raw weight 0.9 sits beyond the cap; averaging over wide draws pulls the mean inside
    let policy = PolicyMatrix::new(DMatrix::from_column_slice(2, 1, &[0.4, -0.4]), dvector![0.5, 0.5]).unwrap();
    let post = PosteriorApprox::new(policy, DMatrix::from_element(2, 1, 0.25), 20_000).unwrap();
    let w = bppp_weights(&post, dvector![1.0].as_view(), &ConstraintSet::default(), 9).unwrap();
    assert!(w[0] < 0.6 && w[0] > 0.3, "{w}");
}

#[test]
fn prior_calibration_values() {
    assert!((sigma_theta(0.35, 242).unwrap() - 0.0225).abs() < 1e-4);
    for (delta, s, nu) in [(0.20, 0.0129, 0.0005), (0.35, 0.0225, 0.0015), (0.50, 0.0321, 0.0031)] {
        let st = sigma_theta(delta, 242).unwrap();
        let v = prior_variance(delta, 242, 726).unwrap();
        assert!((st - s).abs() < 5e-5, "{delta}: {st}");
        assert!((v - nu).abs() < 5e-5, "{delta}: {v}");
    }
    // T < L keeps the base variance
    let s = sigma_theta(0.35, 100).unwrap();
    assert_eq!(prior_variance(0.35, 100, 50).unwrap(), s * s);
    assert!(sigma_theta(0.0, 10).is_err());
    assert!(sigma_theta(0.3, 0).is_err());
}
