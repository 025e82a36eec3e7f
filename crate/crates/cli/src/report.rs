use std::fmt::Write as _;
use std::path::Path;

use bppp::analytics::{
    certainty_equivalent, default_segments, performance_fee, performance_row, rolling_sharpe, sharpe,
    sharpe_diff_test, spanning_regression, subperiod_sharpe, PerformanceRow, StandardErrors, PERIODS_PER_YEAR,
};
use bppp::backtest::{apply_costs, BacktestResult};
use bppp::Strategy;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub n_boot: usize,
    pub seed: u64,
    pub rolling_window: usize,
    pub ce_gammas: Vec<f64>,
    /// Cost in bp used for the net Sharpe column of the performance table.
    pub table_tc: f64,
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>, CliError> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).map_err(|e| CliError::Output(path, e.to_string()))
}

fn finish(mut w: csv::Writer<std::fs::File>, dir: &Path, name: &str) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Io(dir.join(name), e))
}

fn row(w: &mut csv::Writer<std::fs::File>, dir: &Path, name: &str, fields: Vec<String>) -> Result<(), CliError> {
    w.write_record(&fields).map_err(|e| CliError::Output(dir.join(name), e.to_string()))
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn excess(total: &[f64], rf: &[f64]) -> Vec<f64> {
    total.iter().zip(rf).map(|(r, f)| r - f).collect()
}

/// Table rows for every result; the net column charges `table_tc` bp.
pub fn performance_rows(results: &[BacktestResult], table_tc: f64) -> Result<Vec<PerformanceRow>, CliError> {
    results
        .iter()
        .map(|res| {
            let net_total = apply_costs(&res.gross_returns, &res.turnover, table_tc)?;
            let row = performance_row(
                res.strategy.label(),
                &res.gross_excess(),
                &res.gross_returns,
                &excess(&net_total, &res.risk_free),
                &res.turnover,
            )?;
            Ok(row)
        })
        .collect()
}

/// Writes the analytics files for a set of backtests. `results` must contain
/// the benchmark strategy, which serves as the market series.
pub fn write_reports(dir: &Path, results: &[BacktestResult], opts: &ReportOptions) -> Result<Vec<String>, CliError> {
    let market = results
        .iter()
        .find(|r| r.strategy == Strategy::Benchmark)
        .ok_or_else(|| CliError::Config("reports need the benchmark strategy".into()))?;
    let market_excess = market.gross_excess();
    let mut written = Vec::new();

    let rows = performance_rows(results, opts.table_tc)?;
    let name = "performance.csv";
    let mut w = writer(dir, name)?;
    row(&mut w, dir, name, [
        "strategy", "mean", "vol", "sharpe", "max_drawdown", "var95", "cvar95", "turnover", "skewness", "kurtosis",
        "sharpe_net",
    ].map(String::from).to_vec())?;
    for (res, r) in results.iter().zip(&rows) {
        row(&mut w, dir, name, vec![
            res.strategy.name().into(),
            num(r.mean),
            num(r.vol),
            num(r.sharpe),
            num(r.max_drawdown),
            num(r.var95),
            num(r.cvar95),
            num(r.turnover),
            num(r.skewness),
            num(r.kurtosis),
            num(r.sharpe_net),
        ])?;
    }
    finish(w, dir, name)?;
    written.push(name.to_string());

    let name = "ce_gamma.csv";
    let mut w = writer(dir, name)?;
    let mut header = vec!["strategy".to_string()];
    for g in &opts.ce_gammas {
        header.push(format!("ce_gamma_{g}"));
        header.push(format!("fee_bp_gamma_{g}"));
    }
    row(&mut w, dir, name, header)?;
    let market_ce: Vec<f64> = opts
        .ce_gammas
        .iter()
        .map(|&g| certainty_equivalent(&market.gross_returns, g).unwrap_or(f64::NAN))
        .collect();
    for res in results {
        let mut fields = vec![res.strategy.name().to_string()];
        for (g, mce) in opts.ce_gammas.iter().zip(&market_ce) {
            let ce = certainty_equivalent(&res.gross_returns, *g).unwrap_or(f64::NAN);
            fields.push(num(ce));
            fields.push(num(performance_fee(ce, *mce)));
        }
        row(&mut w, dir, name, fields)?;
    }
    finish(w, dir, name)?;
    written.push(name.to_string());

    let name = "tests.csv";
    let mut w = writer(dir, name)?;
    row(&mut w, dir, name, [
        "strategy", "sharpe_diff", "std_error", "t_stat", "p_value", "block_length", "n_boot", "alpha_annual", "beta",
        "t_alpha", "p_alpha", "r_squared",
    ].map(String::from).to_vec())?;
    for res in results.iter().filter(|r| r.strategy != Strategy::Benchmark) {
        let x = res.gross_excess();
        let mut fields = vec![res.strategy.name().to_string()];
        match sharpe_diff_test(&x, &market_excess, opts.seed, opts.n_boot) {
            Ok(t) => fields.extend([
                num(t.diff),
                num(t.std_error),
                num(t.t_stat),
                num(t.p_value),
                t.block_length.to_string(),
                t.n_boot.to_string(),
            ]),
            Err(e) => {
                log::warn!("{}: Sharpe difference test skipped: {e}", res.strategy);
                fields.extend(std::iter::repeat_n(String::new(), 6));
            }
        }
        match spanning_regression(&x, &market_excess, StandardErrors::Homoskedastic) {
            Ok(s) => fields.extend([num(s.alpha_annual), num(s.beta), num(s.t_alpha), num(s.p_alpha), num(s.r_squared)]),
            Err(e) => {
                log::warn!("{}: spanning regression skipped: {e}", res.strategy);
                fields.extend(std::iter::repeat_n(String::new(), 5));
            }
        }
        row(&mut w, dir, name, fields)?;
    }
    finish(w, dir, name)?;
    written.push(name.to_string());

    let name = "subperiods.csv";
    let mut w = writer(dir, name)?;
    row(&mut w, dir, name, ["strategy", "segment", "start", "end", "months", "sharpe", "skipped"].map(String::from).to_vec())?;
    let segments = default_segments(&market.dates);
    for res in results {
        for s in subperiod_sharpe(&res.dates, &res.gross_excess(), &segments)? {
            let seg = segments.iter().find(|g| g.label == s.label).expect("segment label");
            row(&mut w, dir, name, vec![
                res.strategy.name().into(),
                s.label.clone(),
                seg.start.to_string(),
                seg.end.to_string(),
                s.months.to_string(),
                s.sharpe.map(num).unwrap_or_default(),
                s.skipped.to_string(),
            ])?;
        }
    }
    finish(w, dir, name)?;
    written.push(name.to_string());

    let name = "rolling_sharpe.csv";
    let mut w = writer(dir, name)?;
    let mut header = vec!["date".to_string()];
    header.extend(results.iter().map(|r| r.strategy.name().to_string()));
    row(&mut w, dir, name, header)?;
    let rolls: Vec<Vec<Option<f64>>> = results.iter().map(|r| rolling_sharpe(&r.gross_excess(), opts.rolling_window)).collect();
    for (i, d) in market.dates.iter().enumerate() {
        let mut fields = vec![d.to_string()];
        fields.extend(rolls.iter().map(|r| r[i].map(num).unwrap_or_default()));
        row(&mut w, dir, name, fields)?;
    }
    finish(w, dir, name)?;
    written.push(name.to_string());

    let name = "tc_sweep.csv";
    let mut w = writer(dir, name)?;
    let mut header = vec!["metric".to_string()];
    for res in results {
        header.extend(res.tc_bps_grid.iter().map(|c| format!("{}_{c}bps", res.strategy.name())));
    }
    row(&mut w, dir, name, header)?;
    let mut sharpe_row = vec!["sharpe_net".to_string()];
    let mut mean_row = vec!["mean_net".to_string()];
    for res in results {
        for i in 0..res.tc_bps_grid.len() {
            let x = res.net_excess(i);
            sharpe_row.push(sharpe(&x, PERIODS_PER_YEAR).map(num).unwrap_or_default());
            mean_row.push(num(x.iter().sum::<f64>() / x.len() as f64 * PERIODS_PER_YEAR));
        }
    }
    row(&mut w, dir, name, sharpe_row)?;
    row(&mut w, dir, name, mean_row)?;
    finish(w, dir, name)?;
    written.push(name.to_string());

    let name = "summary.md";
    let md = summary_markdown(&rows, opts.table_tc);
    std::fs::write(dir.join(name), md).map_err(|e| CliError::Io(dir.join(name), e))?;
    written.push(name.to_string());
    Ok(written)
}

/// Performance table in markdown, percentages to two decimals.
pub fn summary_markdown(rows: &[PerformanceRow], table_tc: f64) -> String {
    let mut s = String::new();
    s.push_str("| Strategy | Mean (%) | Vol (%) | Sharpe | MaxDD (%) | VaR 95 (%) | CVaR 95 (%) | Turnover | Skew | Kurt. | Sharpe (net) |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |",
            r.label,
            100.0 * r.mean,
            100.0 * r.vol,
            r.sharpe,
            100.0 * r.max_drawdown,
            100.0 * r.var95,
            100.0 * r.cvar95,
            r.turnover,
            r.skewness,
            r.kurtosis,
            r.sharpe_net
        );
    }
    let _ = writeln!(s, "\nAnnualised mean and volatility of excess returns. Net Sharpe charges {table_tc} bp per unit of one-way turnover.");
    s
}

/// One cell of a prior-sensitivity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub delta: f64,
    pub dynamic: bool,
    pub sharpe: f64,
    pub ce: f64,
    pub turnover: f64,
    pub mean_tilt_norm: f64,
    pub mean_abs_theta: f64,
    pub error: Option<String>,
}

impl SensitivityRow {
    pub fn from_result(delta: f64, dynamic: bool, gamma: f64, res: &BacktestResult) -> Self {
        let n = res.theta_summary.len().max(1) as f64;
        Self {
            delta,
            dynamic,
            sharpe: sharpe(&res.gross_excess(), PERIODS_PER_YEAR).unwrap_or(f64::NAN),
            ce: certainty_equivalent(&res.gross_returns, gamma).unwrap_or(f64::NAN),
            turnover: res.mean_turnover(),
            mean_tilt_norm: res.theta_summary.iter().map(|t| t.tilt_norm).sum::<f64>() / n,
            mean_abs_theta: res.theta_summary.iter().map(|t| t.mean_abs).sum::<f64>() / n,
            error: None,
        }
    }

    pub fn failed(delta: f64, dynamic: bool, error: String) -> Self {
        Self {
            delta,
            dynamic,
            sharpe: f64::NAN,
            ce: f64::NAN,
            turnover: f64::NAN,
            mean_tilt_norm: f64::NAN,
            mean_abs_theta: f64::NAN,
            error: Some(error),
        }
    }
}

pub fn write_sensitivity(dir: &Path, rows: &[SensitivityRow]) -> Result<Vec<String>, CliError> {
    let name = "sensitivity.csv";
    let mut w = writer(dir, name)?;
    row(&mut w, dir, name, [
        "delta", "dynamic", "sharpe", "ce", "turnover", "mean_tilt_norm", "mean_abs_theta", "error",
    ].map(String::from).to_vec())?;
    for r in rows {
        row(&mut w, dir, name, vec![
            num(r.delta),
            r.dynamic.to_string(),
            num(r.sharpe),
            num(r.ce),
            num(r.turnover),
            num(r.mean_tilt_norm),
            num(r.mean_abs_theta),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    finish(w, dir, name)?;

    let mut md = String::from("| delta | Dynamic | Sharpe | CE (%) | Turnover | Mean tilt norm | Mean abs theta |\n");
    md.push_str("|---:|:---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        if let Some(e) = &r.error {
            let _ = writeln!(md, "| {:.2} | {} | failed: {e} | | | | |", r.delta, if r.dynamic { "Yes" } else { "No" });
            continue;
        }
        let _ = writeln!(
            md,
            "| {:.2} | {} | {:.3} | {:.3} | {:.2} | {:.4} | {:.4} |",
            r.delta,
            if r.dynamic { "Yes" } else { "No" },
            r.sharpe,
            100.0 * r.ce,
            r.turnover,
            r.mean_tilt_norm,
            r.mean_abs_theta
        );
    }
    std::fs::write(dir.join("sensitivity.md"), md).map_err(|e| CliError::Io(dir.join("sensitivity.md"), e))?;
    Ok(vec![name.to_string(), "sensitivity.md".to_string()])
}
