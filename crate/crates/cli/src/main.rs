mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bppp::backtest::{run_strategies, BacktestConfig, BacktestResult};
use bppp::estimation::{prior_variance, sigma_theta};
use bppp::ingestion::{
    build_timing_signals, cumulative_index, load_factors, load_signals, synthetic_dataset, write_factors,
    write_signals, SyntheticSpec,
};
use bppp::theory::run_verification;
use bppp::{align, AlignedData, Strategy};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use config::Settings;
use report::{write_reports, write_sensitivity, ReportOptions, SensitivityRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("cannot write {}: {}", .0.display(), .1)]
    Output(PathBuf, String),
    #[error(transparent)]
    Core(#[from] bppp::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::MissingFile(_) | Self::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "bppp", version, about = "Bayesian parametric portfolio policies: backtests, sensitivity grids and checks")]
struct Cli {
    /// Log progress to stderr (RUST_LOG refines the filter).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run strategies out of sample and write performance reports.
    Backtest(RunArgs),
    /// BPPP over a grid of delta values, with dynamic and static prior means.
    Sensitivity {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated delta values.
        #[arg(long)]
        deltas: Option<String>,
    },
    /// Monte-Carlo checks of the Jensen gap and variance decomposition.
    VerifyTheory {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of random concave experiments in the sign check.
        #[arg(long, default_value_t = 50)]
        experiments: usize,
        /// Optional CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the calibrated prior scale and variance.
    CalibratePrior {
        #[arg(long)]
        delta: f64,
        /// Number of signals L.
        #[arg(long = "n-signals")]
        n_signals: usize,
        /// Estimation window length T; defaults to L.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Signal construction.
    #[command(subcommand)]
    Signals(SignalsCommand),
    /// Synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Subcommand)]
enum SignalsCommand {
    /// Build valuation, reversal and volatility timing signals from a factor file.
    BuildTiming {
        #[arg(long)]
        factors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a synthetic factor file, signal file and the true policy.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        assets: usize,
        #[arg(long = "n-signals", default_value_t = 10)]
        n_signals: usize,
        #[arg(long, default_value_t = 240)]
        periods: usize,
        #[arg(long, default_value_t = 3)]
        active: usize,
        #[arg(long, default_value_t = 0.01)]
        theta_scale: f64,
        #[arg(long, default_value_t = 0.04)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags shared by `backtest` and `sensitivity`. Each flag overrides the
/// config-file key of the same name.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    factors: Option<PathBuf>,
    #[arg(long)]
    signals: Option<PathBuf>,
    /// Use a seeded synthetic dataset instead of files.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    synthetic_periods: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated strategies, or `all`.
    #[arg(long, alias = "strategy")]
    strategies: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    dynamic_prior_mean: Option<bool>,
    /// Comma-separated transaction costs in bp.
    #[arg(long)]
    tc: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    initial_window: Option<usize>,
    /// Fixed prior variance instead of the calibrated one.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    degenerate_posterior: Option<bool>,
    #[arg(long)]
    position_cap: Option<f64>,
    #[arg(long)]
    gross_cap: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    rolling_window: Option<usize>,
    /// Comma-separated risk aversions for the certainty-equivalent table.
    #[arg(long)]
    ce_gammas: Option<String>,
    /// First signal month, YYYYMM.
    #[arg(long)]
    start: Option<String>,
    /// Last signal month, YYYYMM.
    #[arg(long)]
    end: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Settings {
        let mut s = Settings::default();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.set(k, v);
            }
        };
        let disp = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("factors", disp(&self.factors));
        put("signals", disp(&self.signals));
        put("synthetic", self.synthetic.then(|| "true".to_string()));
        put("synthetic_periods", self.synthetic_periods.map(|v| v.to_string()));
        put("out", disp(&self.out));
        put("strategies", self.strategies.clone());
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("delta", self.delta.map(|v| v.to_string()));
        put("dynamic_prior_mean", self.dynamic_prior_mean.map(|v| v.to_string()));
        put("tc", self.tc.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("draws", self.draws.map(|v| v.to_string()));
        put("initial_window", self.initial_window.map(|v| v.to_string()));
        put("nu", self.nu.map(|v| v.to_string()));
        put("degenerate_posterior", self.degenerate_posterior.map(|v| v.to_string()));
        put("position_cap", self.position_cap.map(|v| v.to_string()));
        put("gross_cap", self.gross_cap.map(|v| v.to_string()));
        put("p0", self.p0.map(|v| v.to_string()));
        put("n_boot", self.n_boot.map(|v| v.to_string()));
        put("rolling_window", self.rolling_window.map(|v| v.to_string()));
        put("ce_gammas", self.ce_gammas.clone());
        put("start", self.start.clone());
        put("end", self.end.clone());
        s
    }

    /// Config file first, then command-line flags.
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        s.overlay(&self.overrides());
        Ok(s)
    }
}

fn slice_rows(data: &AlignedData, keep: &[usize]) -> AlignedData {
    let pick = |m: &nalgebra::DMatrix<f64>| m.select_rows(keep);
    AlignedData {
        signal_dates: keep.iter().map(|&i| data.signal_dates[i]).collect(),
        signals: pick(&data.signals),
        excess: pick(&data.excess),
        risk_free: data.risk_free.select_rows(keep),
        asset_names: data.asset_names.clone(),
        signal_names: data.signal_names.clone(),
    }
}

struct Loaded {
    data: AlignedData,
    source: serde_json::Value,
}

fn load_data(s: &Settings) -> Result<Loaded, CliError> {
    let synthetic = s.flag("synthetic")?.unwrap_or(false);
    let (data, source) = if synthetic {
        let spec = SyntheticSpec {
            seed: s.value("seed")?.unwrap_or(0),
            n_periods: s.value("synthetic_periods")?.unwrap_or(240),
            ..Default::default()
        };
        let (r, sig, _) = synthetic_dataset(&spec)?;
        (align(&r, &sig)?, json!({"synthetic": true, "seed": spec.seed, "periods": spec.n_periods}))
    } else {
        let (Some(f), Some(g)) = (s.path("factors"), s.path("signals")) else {
            return Err(CliError::Config("give factors and signals files, or --synthetic".into()));
        };
        for p in [&f, &g] {
            if !p.exists() {
                return Err(CliError::MissingFile(p.clone()));
            }
        }
        let r = load_factors(&f)?;
        let sig = load_signals(&g)?;
        (align(&r, &sig)?, json!({"factors": f.display().to_string(), "signals": g.display().to_string()}))
    };
    let (start, end) = (s.date("start")?, s.date("end")?);
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| start.is_none_or(|d| data.signal_dates[i] >= d) && end.is_none_or(|d| data.signal_dates[i] <= d))
        .collect();
    if keep.is_empty() {
        return Err(CliError::Config("date range selects no rows".into()));
    }
    let data = if keep.len() == data.len() { data } else { slice_rows(&data, &keep) };
    Ok(Loaded { data, source })
}

fn out_dir(s: &Settings) -> Result<PathBuf, CliError> {
    let dir = s.path("out").unwrap_or_else(|| PathBuf::from("bppp-out"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    Ok(dir)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    s: &Settings,
    cfg: &BacktestConfig,
    loaded: &Loaded,
    extra: serde_json::Value,
) -> Result<(), CliError> {
    let manifest = json!({
        "tool": "bppp",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "settings": s.entries(),
        "effective": config::effective(cfg),
        "data": {
            "source": loaded.source,
            "rows": loaded.data.len(),
            "first_signal": loaded.data.signal_dates.first().map(|d| d.to_string()),
            "last_signal": loaded.data.signal_dates.last().map(|d| d.to_string()),
            "assets": loaded.data.asset_names,
            "n_signals": loaded.data.n_signals(),
        },
        "outputs": extra,
    });
    let path = dir.join("run_manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Output(path.clone(), e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::Io(path, e))
}

fn report_options(s: &Settings, cfg: &BacktestConfig) -> Result<ReportOptions, CliError> {
    Ok(ReportOptions {
        n_boot: s.value("n_boot")?.unwrap_or(4999),
        seed: cfg.seed,
        rolling_window: s.value("rolling_window")?.unwrap_or(36),
        ce_gammas: s.list("ce_gammas")?.unwrap_or_else(|| vec![2.0, 5.0, 10.0]),
        table_tc: s.value("table_tc")?.unwrap_or(10.0),
    })
}

fn cmd_backtest(args: &RunArgs) -> Result<(), CliError> {
    let mut s = args.settings()?;
    let cfg = s.backtest_config()?;
    let mut strategies = s.strategies()?;
    if !strategies.contains(&Strategy::Benchmark) {
        // the market series anchors the tests and fees
        strategies.insert(0, Strategy::Benchmark);
    }
    s.set("strategies", strategies.iter().map(|x| x.name()).collect::<Vec<_>>().join(","));
    let opts = report_options(&s, &cfg)?;
    let loaded = load_data(&s)?;
    let dir = out_dir(&s)?;

    log::info!("running {} strategies on {} rows", strategies.len(), loaded.data.len());
    let results: Vec<BacktestResult> = run_strategies(&cfg, &loaded.data, &strategies)
        .into_iter()
        .zip(&strategies)
        .map(|(r, st)| r.map_err(|e| CliError::Failed(format!("{st}: {e}"))))
        .collect::<Result<_, _>>()?;
    let mut written = Vec::new();
    for res in &results {
        let sub = dir.join(res.strategy.name());
        std::fs::create_dir_all(&sub).map_err(|e| CliError::Io(sub.clone(), e))?;
        res.write_csvs(&sub)?;
        written.push(format!("{}/", res.strategy.name()));
        let failures = res.failures();
        if failures > 0 {
            log::warn!("{}: {failures} estimation failures, previous weights carried forward", res.strategy);
        }
    }
    written.extend(write_reports(&dir, &results, &opts)?);
    write_manifest(&dir, "backtest", &s, &cfg, &loaded, json!(written))?;
    let rows = report::performance_rows(&results, opts.table_tc)?;
    print!("{}", report::summary_markdown(&rows, opts.table_tc));
    println!("\nresults written to {}", dir.display());
    Ok(())
}

fn cmd_sensitivity(args: &RunArgs, deltas: Option<&str>) -> Result<(), CliError> {
    let mut s = args.settings()?;
    if let Some(d) = deltas {
        s.set("deltas", d);
    }
    let grid: Vec<f64> = s.list("deltas")?.unwrap_or_else(|| vec![0.35, 0.50, 0.70, 0.90]);
    if grid.is_empty() {
        return Err(CliError::Config("delta grid is empty".into()));
    }
    let base = BacktestConfig { strategy: Strategy::Bppp, ..s.backtest_config()? };
    let loaded = load_data(&s)?;
    let dir = out_dir(&s)?;
    // an explicit prior-mean setting pins the grid to that mode
    let modes = match s.flag("dynamic_prior_mean")? {
        Some(m) => vec![m],
        None => vec![true, false],
    };
    let cells: Vec<(f64, bool)> = grid.iter().flat_map(|&d| modes.iter().map(move |&m| (d, m))).collect();
    let rows: Vec<SensitivityRow> = cells
        .par_iter()
        .map(|&(delta, dynamic)| {
            let cfg = BacktestConfig { delta, dynamic_prior_mean: dynamic, ..base.clone() };
            match bppp::backtest::run_backtest_aligned(&cfg, &loaded.data) {
                Ok(res) => SensitivityRow::from_result(delta, dynamic, cfg.gamma, &res),
                Err(e) => {
                    log::warn!("cell delta = {delta}, dynamic = {dynamic} failed: {e}");
                    SensitivityRow::failed(delta, dynamic, e.to_string())
                }
            }
        })
        .collect();
    let written = write_sensitivity(&dir, &rows)?;
    write_manifest(&dir, "sensitivity", &s, &base, &loaded, json!(written))?;
    print!("{}", std::fs::read_to_string(dir.join("sensitivity.md")).map_err(|e| CliError::Io(dir.join("sensitivity.md"), e))?);
    Ok(())
}

fn cmd_verify(seed: u64, experiments: usize, out: Option<&Path>) -> Result<(), CliError> {
    let rows = run_verification(seed, experiments)?;
    let mut failed = 0;
    for r in &rows {
        println!(
            "{} {}: estimate {:.6e}, reference {:.6e}, margin {:.3e} (SE {:.3e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.property,
            r.estimate,
            r.reference,
            (r.estimate - r.reference).abs(),
            r.std_error
        );
        failed += usize::from(!r.passed);
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output(path.to_path_buf(), e.to_string()))?;
        for r in &rows {
            w.serialize(r).map_err(|e| CliError::Output(path.to_path_buf(), e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} theory properties failed")));
    }
    Ok(())
}

fn cmd_calibrate(delta: f64, l: usize, window: Option<usize>) -> Result<(), CliError> {
    let t = window.unwrap_or(l);
    let s = sigma_theta(delta, l)?;
    let nu = prior_variance(delta, l, t)?;
    println!("delta = {delta}, L = {l}, T = {t}");
    println!("sigma_theta = {s:.6}");
    println!("nu = {nu:.6}");
    Ok(())
}

fn cmd_build_timing(factors: &Path, out: &Path) -> Result<(), CliError> {
    if !factors.exists() {
        return Err(CliError::MissingFile(factors.to_path_buf()));
    }
    let r = load_factors(factors)?;
    let sig = build_timing_signals(&r, &cumulative_index(&r))?;
    write_signals(&sig, out)?;
    println!("{} timing signals for {} months written to {}", sig.n_signals(), sig.len(), out.display());
    Ok(())
}

fn cmd_synth(out: &Path, spec: &SyntheticSpec) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(out.to_path_buf(), e))?;
    let (r, sig, truth) = synthetic_dataset(spec)?;
    write_factors(&r, &out.join("factors.csv"))?;
    write_signals(&sig, &out.join("signals.csv"))?;
    let path = out.join("true_theta.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Output(path.clone(), e.to_string()))?;
    let mut header = vec!["asset".to_string()];
    header.extend(sig.signal_names().iter().cloned());
    w.write_record(&header).map_err(|e| CliError::Output(path.clone(), e.to_string()))?;
    for (k, name) in r.asset_names().iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(truth.theta.row(k).iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| CliError::Output(path.clone(), e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(path.clone(), e))?;
    println!("synthetic panels written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Backtest(args) => cmd_backtest(&args),
        Command::Sensitivity { run, deltas } => cmd_sensitivity(&run, deltas.as_deref()),
        Command::VerifyTheory { seed, experiments, out } => cmd_verify(seed, experiments, out.as_deref()),
        Command::CalibratePrior { delta, n_signals, window } => cmd_calibrate(delta, n_signals, window),
        Command::Signals(SignalsCommand::BuildTiming { factors, out }) => cmd_build_timing(&factors, &out),
        Command::Synth(SynthCommand::Generate { out, assets, n_signals, periods, active, theta_scale, noise, seed }) => {
            let spec = SyntheticSpec {
                n_assets: assets,
                n_signals,
                n_periods: periods,
                active,
                theta_scale,
                noise,
                seed,
                ..Default::default()
            };
            cmd_synth(&out, &spec)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
