use super::*;
use nalgebra::dmatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn toy_data(t: usize, k: usize, l: usize, seed: u64) -> AlignedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.04).unwrap();
    let signals = DMatrix::from_fn(t, l, |_, _| StandardNormal.sample(&mut rng));
    let excess = DMatrix::from_fn(t, k, |s, j| {
        let tilt = if j == 1 && l > 0 { 0.01 * signals[(s, 0)] } else { 0.0 };
        0.005 + tilt + noise.sample(&mut rng)
    });
    let start = YearMonth::new(2000, 1).unwrap();
    AlignedData {
        signal_dates: (0..t).map(|i| start.add_months(i as i64)).collect(),
        signals,
        excess,
        risk_free: DVector::from_element(t, 0.001),
        asset_names: (0..k).map(|j| format!("A{j}")).collect(),
        signal_names: (0..l).map(|j| format!("S{j}")).collect(),
    }
}

fn quick(strategy: Strategy) -> BacktestConfig {
    BacktestConfig { strategy, initial_window: 30, draws: 200, ..Default::default() }
}

#[test]
fn standardize_examples() {
    let x = dmatrix![1.0, f64::NAN, 5.0; 2.0, f64::NAN, 5.0; 3.0, f64::NAN, 5.0];
    let z = standardize_window(&x, 2, VarianceConvention::Population);
    let c0: Vec<f64> = z.column(0).iter().copied().collect();
    let s = 1.5f64.sqrt();
    assert_eq!(c0, vec![-s, 0.0, s]);
    let mean = c0.iter().sum::<f64>() / 3.0;
    let var = c0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-14);
    assert!(z.column(1).iter().all(|&v| v == 0.0));
    assert!(z.column(2).iter().all(|&v| v == 0.0));

    let z = standardize_window(&x, 2, VarianceConvention::Sample);
    assert!((z[(2, 0)] - 1.0).abs() < 1e-15);
}

#[test]
fn standardize_ignores_rows_after_window_end() {
    let x = dmatrix![1.0; f64::NAN; 3.0; 100.0];
    let z = standardize_window(&x, 2, VarianceConvention::Population);
    assert_eq!(z.nrows(), 3);
    assert_eq!(z[(1, 0)], 0.0);
    assert_eq!(z[(0, 0)], -1.0);
    assert_eq!(z[(2, 0)], 1.0);
}

#[test]
fn turnover_examples() {
    let w = dmatrix![0.3, 0.2; 0.3, 0.2; 0.3, 0.2];
    let r = DMatrix::zeros(3, 2);
    assert_eq!(turnover(&w, &r, &[0.0; 3], true).unwrap(), vec![0.0; 3]);

    let flip = dmatrix![0.5; -0.5];
    assert_eq!(turnover(&flip, &DMatrix::zeros(2, 1), &[0.0; 2], true).unwrap(), vec![0.0, 1.0]);

    let hold = dmatrix![1.0; 1.0; 1.0];
    let r = dmatrix![0.07; -0.31; 0.002];
    assert_eq!(turnover(&hold, &r, &[0.004, 0.001, 0.0], true).unwrap(), vec![0.0; 3]);
}

#[test]
fn drift_hand_check() {
    // 50/50 in two assets; asset 0 gains 10%, asset 1 loses 10%, rf 0:
    // growth 1.0, drifted weights 0.55/0.45, rebalancing back costs 0.1
    let w = dmatrix![0.5, 0.5; 0.5, 0.5];
    let r = dmatrix![0.1, -0.1; 0.0, 0.0];
    let to = turnover(&w, &r, &[0.0, 0.0], true).unwrap();
    assert!((to[1] - 0.1).abs() < 1e-15);
    assert_eq!(turnover(&w, &r, &[0.0, 0.0], false).unwrap()[1], 0.0);
    // half in cash: growth 1 + 0.5 * 0.2 = 1.1, drifted weight 0.6/1.1
    let w = dmatrix![0.5; 0.5];
    let r = dmatrix![0.2; 0.0];
    let to = turnover(&w, &r, &[0.0, 0.0], true).unwrap();
    assert!((to[1] - (0.6 / 1.1 - 0.5)).abs() < 1e-15);
}

#[test]
fn cost_examples() {
    let g = vec![0.01, -0.02, 0.03];
    assert_eq!(apply_costs(&g, &[1.0, 2.0, 3.0], 0.0).unwrap(), g);
    let net = apply_costs(&[0.0], &[9.54], 10.0).unwrap();
    assert!((net[0] + 0.00954).abs() < 1e-15);
    assert!(apply_costs(&g, &[1.0], 5.0).is_err());
}

#[test]
fn benchmark_strategy_is_static() {
    let data = toy_data(60, 3, 2, 1);
    let res = run_backtest_aligned(&quick(Strategy::Benchmark), &data).unwrap();
    assert_eq!(res.len(), 30);
    for i in 0..res.len() {
        assert_eq!(res.weights.row(i).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
    }
    assert!(res.turnover.iter().all(|&t| t == 0.0));
    assert_eq!(res.net_returns[1], res.gross_returns);
    assert_eq!(res.dates[0], data.signal_dates[30].next());
}

#[test]
fn ppp_without_signals_equals_benchmark() {
    let data = toy_data(60, 3, 0, 2);
    let mut cfg = quick(Strategy::Ppp);
    cfg.benchmark = Some(vec![0.5, 0.3, 0.2]);
    let ppp = run_backtest_aligned(&cfg, &data).unwrap();
    cfg.strategy = Strategy::Benchmark;
    let bench = run_backtest_aligned(&cfg, &data).unwrap();
    assert_eq!(ppp.weights, bench.weights);
    assert_eq!(ppp.gross_returns, bench.gross_returns);
    assert!(ppp.thetas.iter().all(|t| t.shape() == (3, 0)));
}

#[test]
fn no_look_ahead() {
    let data = toy_data(50, 2, 3, 3);
    let cut = 40;
    let mut mutated = data.clone();
    for s in cut + 1..data.len() {
        for c in 0..3 {
            mutated.signals[(s, c)] = 7.0 * (s + c) as f64;
        }
    }
    // returns of row `cut` are realised after the weights at `cut` are set
    for s in cut..data.len() {
        mutated.excess[(s, 0)] = -0.2;
        mutated.excess[(s, 1)] = -0.3;
    }
    for strategy in [Strategy::Ppp, Strategy::Bppp, Strategy::MeanVariance, Strategy::SimpleMomentum] {
        let a = run_backtest_aligned(&quick(strategy), &data).unwrap();
        let b = run_backtest_aligned(&quick(strategy), &mutated).unwrap();
        let upto = cut - 30 + 1;
        assert_eq!(a.weights.rows(0, upto), b.weights.rows(0, upto), "{strategy}");
        assert_ne!(a.weights, b.weights, "{strategy}: mutation had no effect at all");
    }
}

#[test]
fn reruns_are_bit_exact() {
    let data = toy_data(56, 3, 4, 4);
    let cfg = quick(Strategy::Bppp);
    let a = run_backtest_aligned(&cfg, &data).unwrap();
    let b = run_backtest_aligned(&cfg, &data).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.net_returns, b.net_returns);
    let other = run_backtest_aligned(&BacktestConfig { seed: 7, ..cfg }, &data).unwrap();
    assert_ne!(a.weights, other.weights);
}

#[test]
fn momentum_uses_one_signal() {
    let data = toy_data(60, 3, 5, 5);
    let res = run_backtest_aligned(&quick(Strategy::SimpleMomentum), &data).unwrap();
    assert!(res.thetas.iter().all(|t| t.shape() == (3, 1)));
    let sig = momentum_signal(&data, &crate::data::market_benchmark(3), 12);
    assert!(sig[(11, 0)].is_nan());
    let expect = (0..12).map(|s| 1.0 + data.excess[(s, 0)]).product::<f64>() - 1.0;
    assert!((sig[(12, 0)] - expect).abs() < 1e-14);
}

#[test]
fn failures_carry_weights_forward() {
    let mut data = toy_data(60, 2, 2, 6);
    // identical assets make the sample covariance singular
    for s in 0..data.len() {
        data.excess[(s, 1)] = data.excess[(s, 0)];
    }
    let res = run_backtest_aligned(&quick(Strategy::MeanVariance), &data).unwrap();
    assert_eq!(res.failures(), res.len());
    assert!(res.weights.row_iter().all(|w| w[0] == 1.0 && w[1] == 0.0));
}

#[test]
fn bppp_without_variance_tracks_ppp_with_same_prior() {
    let data = toy_data(60, 3, 3, 8);
    let mut cfg = quick(Strategy::Bppp);
    cfg.degenerate_posterior = true;
    cfg.nu_override = Some(1e6);
    let bppp = run_backtest_aligned(&cfg, &data).unwrap();
    cfg.strategy = Strategy::Ppp;
    let ppp = run_backtest_aligned(&cfg, &data).unwrap();
    assert!((&bppp.weights - &ppp.weights).amax() < 1e-12);
}

#[test]
fn horseshoe_records_kappa() {
    let data = toy_data(40, 2, 4, 9);
    let res = run_backtest_aligned(&quick(Strategy::Horseshoe), &data).unwrap();
    assert_eq!(res.failures(), 0);
    for d in &res.diagnostics {
        let k = d.kappa.expect("kappa summary");
        assert!(k.mean > 0.0 && k.mean <= 1.0);
    }
}

#[test]
fn parallel_runs_match_sequential() {
    let data = toy_data(45, 2, 2, 10);
    let base = quick(Strategy::Benchmark);
    let all = run_strategies(&base, &data, &[Strategy::Ppp, Strategy::Benchmark]);
    let ppp = run_backtest_aligned(&quick(Strategy::Ppp), &data).unwrap();
    assert_eq!(all[0].as_ref().unwrap().weights, ppp.weights);
    assert_eq!(all[1].as_ref().unwrap().strategy, Strategy::Benchmark);
}

#[test]
fn config_validation() {
    let data = toy_data(30, 2, 1, 11);
    assert!(run_backtest_aligned(&quick(Strategy::Ppp), &data).is_err());
    let bad = BacktestConfig { initial_window: 12, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = BacktestConfig { benchmark: Some(vec![0.5, 0.4]), ..quick(Strategy::Benchmark) };
    assert!(run_backtest_aligned(&bad, &toy_data(40, 2, 1, 11)).is_err());
}

#[test]
fn result_files_are_written() {
    let data = toy_data(40, 2, 2, 12);
    let mut cfg = quick(Strategy::Horseshoe);
    cfg.tc_bps_grid = vec![0.0, 10.0, 50.0];
    let res = run_backtest_aligned(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    res.write_csvs(dir.path()).unwrap();
    for f in ["weights.csv", "returns.csv", "turnover.csv", "theta_summary.csv", "diagnostics.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), res.len() + 1, "{f}");
    }
    let header = std::fs::read_to_string(dir.path().join("returns.csv")).unwrap();
    assert!(header.starts_with("date,gross,rf,net_0bps,net_10bps,net_50bps"));
}
