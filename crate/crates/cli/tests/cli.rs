use std::path::Path;
use std::process::{Command, Output};

fn bppp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bppp")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const QUICK: &[&str] = &[
    "--synthetic",
    "--synthetic-periods",
    "100",
    "--initial-window",
    "40",
    "--draws",
    "50",
    "--n-boot",
    "99",
];

fn backtest(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["backtest", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    bppp(&args)
}

#[test]
fn backtest_writes_a_complete_result_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = backtest(dir.path(), &["--strategies", "ppp,bppp", "--gamma", "5", "--delta", "0.35", "--tc", "0,10,20,50"]);
    ok(&out);
    for f in [
        "performance.csv",
        "ce_gamma.csv",
        "tests.csv",
        "subperiods.csv",
        "rolling_sharpe.csv",
        "tc_sweep.csv",
        "summary.md",
        "run_manifest.json",
        "ppp/weights.csv",
        "bppp/returns.csv",
        "benchmark/turnover.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let perf = read(&dir.path().join("performance.csv"));
    assert_eq!(perf.lines().count(), 4, "{perf}");

    let sweep = read(&dir.path().join("tc_sweep.csv"));
    let header: Vec<&str> = sweep.lines().next().unwrap().split(',').collect();
    for s in ["benchmark", "ppp", "bppp"] {
        let cols = header.iter().filter(|h| h.starts_with(&format!("{s}_")) && h.ends_with("bps")).count();
        assert_eq!(cols, 4, "{s}: {header:?}");
    }
    let summary = read(&dir.path().join("summary.md"));
    assert!(summary.contains("| BPPP |"));

    let benchmark_turnover = read(&dir.path().join("benchmark/turnover.csv"));
    let zero = |l: &str| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() == 0.0;
    assert!(benchmark_turnover.lines().skip(1).all(zero), "{benchmark_turnover}");
}

#[test]
fn missing_signal_file_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let factors = dir.path().join("factors.csv");
    ok(&bppp(&["synth", "generate", "--out", dir.path().to_str().unwrap(), "--periods", "80"]));
    let missing = dir.path().join("no_such_signals.csv");
    let out = bppp(&[
        "backtest",
        "--factors",
        factors.to_str().unwrap(),
        "--signals",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("res").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(missing.to_str().unwrap()), "{err}");
}

#[test]
fn command_line_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "gamma = 3\ndelta = 0.5\nstrategies = ppp\ntc = 0, 25\nseed = 9\n").unwrap();
    let res = dir.path().join("res");
    let out = backtest(&res, &["--config", cfg.to_str().unwrap(), "--gamma", "7", "--tc", "0,10"]);
    ok(&out);
    let manifest: serde_json::Value = serde_json::from_str(&read(&res.join("run_manifest.json"))).unwrap();
    let eff = &manifest["effective"];
    // contradiction pairs: the flag wins
    assert_eq!(eff["gamma"], "7");
    assert_eq!(eff["tc"], "0,10");
    // file-only keys survive
    assert_eq!(eff["delta"], "0.5");
    assert_eq!(eff["seed"], "9");
    assert_eq!(manifest["settings"]["strategies"], "benchmark,ppp");
}

#[test]
fn repeated_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--strategies", "bppp,momentum"];
    ok(&backtest(a.path(), &args));
    ok(&backtest(b.path(), &args));
    for f in ["performance.csv", "tests.csv", "tc_sweep.csv", "bppp/weights.csv", "momentum/returns.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "gama = 3\n").unwrap();
    let out = backtest(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));
}

#[test]
fn sensitivity_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sensitivity", "--out", dir.path().to_str().unwrap(), "--deltas", "0.35", "--dynamic-prior-mean", "true"];
    args.extend_from_slice(QUICK);
    ok(&bppp(&args));
    let csv = read(&dir.path().join("sensitivity.csv"));
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.lines().next().unwrap().starts_with("delta,dynamic,sharpe,ce,turnover,mean_tilt_norm,mean_abs_theta"));

    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sensitivity", "--out", dir.path().to_str().unwrap(), "--deltas", "0.35,0.5"];
    args.extend_from_slice(QUICK);
    ok(&bppp(&args));
    let csv = read(&dir.path().join("sensitivity.csv"));
    assert_eq!(csv.lines().count(), 5, "{csv}");
}

#[test]
fn calibrate_prior_echo() {
    let out = bppp(&["calibrate-prior", "--delta", "0.20", "--n-signals", "242", "--window", "726"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.rsplit('=').next().unwrap().trim().parse().unwrap()
    };
    assert_eq!(format!("{:.4}", value("sigma_theta")), "0.0129");
    assert_eq!(format!("{:.4}", value("nu")), "0.0005");

    // T <= L: nu is sigma^2
    let out = bppp(&["calibrate-prior", "--delta", "0.35", "--n-signals", "242", "--window", "100"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let nu: f64 = text.lines().find(|l| l.starts_with("nu")).unwrap().rsplit('=').next().unwrap().trim().parse().unwrap();
    assert!((nu - 0.35f64.powi(2) / 242.0).abs() < 1e-6);
}

#[test]
fn verify_theory_passes_with_default_seed() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("theory.csv");
    let out = bppp(&["verify-theory", "--out", report.to_str().unwrap()]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6, "{text}");
    assert!(read(&report).lines().count() == 7);
}

#[test]
fn synth_then_build_timing_signals() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bppp(&["synth", "generate", "--out", dir.path().to_str().unwrap(), "--assets", "4", "--periods", "90", "--seed", "3"]));
    for f in ["factors.csv", "signals.csv", "true_theta.csv"] {
        assert!(dir.path().join(f).exists());
    }
    let timing = dir.path().join("timing.csv");
    ok(&bppp(&[
        "signals",
        "build-timing",
        "--factors",
        dir.path().join("factors.csv").to_str().unwrap(),
        "--out",
        timing.to_str().unwrap(),
    ]));
    let text = read(&timing);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 3 * 4);
    assert_eq!(text.lines().count(), 91);

    // the generated panels feed straight back into a backtest
    let res = dir.path().join("res");
    ok(&bppp(&[
        "backtest",
        "--factors",
        dir.path().join("factors.csv").to_str().unwrap(),
        "--signals",
        dir.path().join("signals.csv").to_str().unwrap(),
        "--strategies",
        "ppp",
        "--initial-window",
        "40",
        "--n-boot",
        "99",
        "--out",
        res.to_str().unwrap(),
    ]));
}
