//! Flat-prior limit on windows where the unpenalised optimum is interior.

use bppp::estimation::{solve_map, MapSolverConfig, Window};
use bppp::policy::{project, raw_weights};
use bppp::{market_benchmark, ConstraintSet, PriorSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn large_nu_reproduces_flat_weights_when_the_optimum_is_interior() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, k, l) = (600, 3, 2);
        let z = DMatrix::from_fn(t, l, |_, _| rng.sample::<f64, _>(StandardNormal));
        // optimal tilt is about mu / (gamma sigma^2) = 0.08 per unit signal, far from the caps
        let r = DMatrix::from_fn(t, k, |s, j| {
            let tilt = if j == 2 { 0.004 * z[(s, 0)] } else { 0.0 };
            0.004 + tilt + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        let rf = DVector::from_element(t, 0.002);
        let w = Window::new(z.as_view(), r.as_view(), rf.as_view()).unwrap();
        let bench = market_benchmark(k);
        let cfg = MapSolverConfig { gradient_tolerance: 1e-9, ..Default::default() };
        let flat = solve_map(&w, &bench, &PriorSpec::flat(k, l), 5.0, &cfg).unwrap();
        let wide = solve_map(&w, &bench, &PriorSpec::gaussian(DMatrix::zeros(k, l), 1e6).unwrap(), 5.0, &cfg).unwrap();
        assert!(flat.converged && wide.converged);

        let c = ConstraintSet::default();
        let mut capped = 0;
        for s in 0..t {
            let wf = project(&raw_weights(&flat.policy, z.row(s).transpose().as_view()).unwrap(), &c).0;
            let ww = project(&raw_weights(&wide.policy, z.row(s).transpose().as_view()).unwrap(), &c).0;
            capped += usize::from(wf[1].abs() >= 0.6 || wf[2].abs() >= 0.6);
            assert!((wf - ww).amax() < 1e-4, "seed {seed} date {s}");
        }
        assert!(capped * 20 < t, "seed {seed}: {capped} capped dates, optimum is not interior");
    }
}
