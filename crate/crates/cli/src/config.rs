use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bppp::backtest::{BacktestConfig, VarianceConvention};
use bppp::{ConstraintSet, Strategy, YearMonth};

use crate::CliError;

/// Resolved `key = value` settings. Later layers overwrite earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

const KNOWN_KEYS: &[&str] = &[
    "factors",
    "signals",
    "synthetic",
    "synthetic_periods",
    "out",
    "strategies",
    "gamma",
    "delta",
    "dynamic_prior_mean",
    "tc",
    "seed",
    "draws",
    "initial_window",
    "nu",
    "degenerate_posterior",
    "drifted_turnover",
    "variance_convention",
    "position_cap",
    "gross_cap",
    "benchmark",
    "mean_variance_window",
    "momentum_lookback",
    "p0",
    "max_iterations",
    "gradient_tolerance",
    "n_boot",
    "rolling_window",
    "ce_gammas",
    "table_tc",
    "start",
    "end",
    "deltas",
];

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("{}:{}: expected key = value", origin.display(), i + 1)));
            };
            let key = normalize(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("{}:{}: unknown key {key:?}", origin.display(), i + 1)));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(normalize(key), value.to_string());
    }

    pub fn overlay(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.0
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("cannot parse {key} = {raw:?}"))),
        }
    }

    pub fn flag(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.get(key).map(|s| s.to_ascii_lowercase()) {
            None => Ok(None),
            Some(s) => match s.as_str() {
                "true" | "yes" | "1" => Ok(Some(true)),
                "false" | "no" | "0" => Ok(Some(false)),
                _ => Err(CliError::Config(format!("{key} must be true or false, got {s:?}"))),
            },
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| CliError::Config(format!("cannot parse {key} entry {s:?}"))))
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>, CliError> {
        match self.get("strategies") {
            None | Some("all") => Ok(Strategy::ALL.to_vec()),
            Some(raw) => {
                let mut out = Vec::new();
                for s in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let strategy: Strategy = s.parse().map_err(|e: bppp::Error| CliError::Config(e.to_string()))?;
                    if !out.contains(&strategy) {
                        out.push(strategy);
                    }
                }
                if out.is_empty() {
                    return Err(CliError::Config("strategies is empty".into()));
                }
                Ok(out)
            }
        }
    }

    pub fn date(&self, key: &str) -> Result<Option<YearMonth>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.replace('-', "").parse().map(Some).map_err(|e: bppp::Error| CliError::Config(e.to_string())),
        }
    }

    /// Engine configuration; the strategy field is filled in per run.
    pub fn backtest_config(&self) -> Result<BacktestConfig, CliError> {
        let mut cfg = BacktestConfig::default();
        if let Some(v) = self.value("gamma")? {
            cfg.gamma = v;
        }
        if let Some(v) = self.value("delta")? {
            cfg.delta = v;
        }
        if let Some(v) = self.flag("dynamic_prior_mean")? {
            cfg.dynamic_prior_mean = v;
        }
        if let Some(v) = self.list("tc")? {
            cfg.tc_bps_grid = v;
        }
        if let Some(v) = self.value("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = self.value("draws")? {
            cfg.draws = v;
        }
        if let Some(v) = self.value("initial_window")? {
            cfg.initial_window = v;
        }
        cfg.nu_override = self.value("nu")?;
        if let Some(v) = self.flag("degenerate_posterior")? {
            cfg.degenerate_posterior = v;
        }
        if let Some(v) = self.flag("drifted_turnover")? {
            cfg.drifted_turnover = v;
        }
        if let Some(v) = self.get("variance_convention") {
            cfg.variance_convention = match v.to_ascii_lowercase().as_str() {
                "population" => VarianceConvention::Population,
                "sample" => VarianceConvention::Sample,
                other => return Err(CliError::Config(format!("variance_convention must be population or sample, got {other:?}"))),
            };
        }
        let cap = self.value("position_cap")?.unwrap_or(cfg.constraints.position_cap);
        let gross = self.value("gross_cap")?.unwrap_or(cfg.constraints.gross_cap);
        cfg.constraints = ConstraintSet::new(cap, gross).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.benchmark = self.list("benchmark")?;
        if let Some(v) = self.value("mean_variance_window")? {
            cfg.mean_variance_window = v;
        }
        if let Some(v) = self.value("momentum_lookback")? {
            cfg.momentum_lookback = v;
        }
        cfg.p0 = self.value("p0")?;
        if let Some(v) = self.value("max_iterations")? {
            cfg.solver.max_iterations = v;
            cfg.horseshoe.solver.max_iterations = v;
        }
        if let Some(v) = self.value("gradient_tolerance")? {
            cfg.solver.gradient_tolerance = v;
            cfg.horseshoe.solver.gradient_tolerance = v;
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Every engine parameter of `cfg`, for the run manifest.
pub fn effective(cfg: &BacktestConfig) -> BTreeMap<String, String> {
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("gamma", cfg.gamma.to_string());
    put("delta", cfg.delta.to_string());
    put("dynamic_prior_mean", cfg.dynamic_prior_mean.to_string());
    put("tc", list(&cfg.tc_bps_grid));
    put("seed", cfg.seed.to_string());
    put("draws", cfg.draws.to_string());
    put("initial_window", cfg.initial_window.to_string());
    put("nu", cfg.nu_override.map(|v| v.to_string()).unwrap_or_else(|| "calibrated".into()));
    put("degenerate_posterior", cfg.degenerate_posterior.to_string());
    put("drifted_turnover", cfg.drifted_turnover.to_string());
    put("variance_convention", format!("{:?}", cfg.variance_convention).to_ascii_lowercase());
    put("position_cap", cfg.constraints.position_cap.to_string());
    put("gross_cap", cfg.constraints.gross_cap.to_string());
    put("benchmark", cfg.benchmark.as_deref().map(list).unwrap_or_else(|| "market".into()));
    put("mean_variance_window", cfg.mean_variance_window.to_string());
    put("momentum_lookback", cfg.momentum_lookback.to_string());
    put("p0", cfg.p0.map(|v| v.to_string()).unwrap_or_else(|| "default".into()));
    put("mask_mode", format!("{:?}", cfg.mask_mode));
    put("max_iterations", cfg.solver.max_iterations.to_string());
    put("gradient_tolerance", cfg.solver.gradient_tolerance.to_string());
    put("horseshoe_max_sweeps", cfg.horseshoe.max_sweeps.to_string());
    put("horseshoe_tolerance", cfg.horseshoe.tolerance.to_string());
    m
}
