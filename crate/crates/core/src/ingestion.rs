//! CSV loading and writing, factor-timing signal construction and seeded
//! synthetic panels with a known policy.
//!
//! The CSV layout is a `date` column of `YYYYMM` codes followed by one column
//! per series. Empty cells and the `-99.99` sentinel are missing.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{market_benchmark, PolicyMatrix, ReturnsPanel, SignalPanel, YearMonth};
use crate::error::{Error, Result};

const SENTINEL: f64 = -99.99;

struct RawTable {
    names: Vec<String>,
    dates: Vec<YearMonth>,
    /// Row-major values, `NaN` where missing.
    values: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::Io { path: shown.clone(), source: e })?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers()?.clone();
    if header.is_empty() || !header[0].eq_ignore_ascii_case("date") {
        return Err(Error::Malformed { path: shown, line: 1, reason: "first column must be `date`".into() });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let malformed = |reason: String| Error::Malformed { path: shown.clone(), line, reason };
        if rec.len() != names.len() + 1 {
            return Err(malformed(format!("expected {} fields, found {}", names.len() + 1, rec.len())));
        }
        let date: YearMonth = rec[0].parse().map_err(|e: Error| malformed(e.to_string()))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|cell| {
                if cell.is_empty() {
                    return Ok(f64::NAN);
                }
                let v: f64 = cell.parse().map_err(|_| malformed(format!("not a number: {cell:?}")))?;
                Ok(if v == SENTINEL { f64::NAN } else { v })
            })
            .collect::<Result<Vec<f64>>>()?;
        dates.push(date);
        values.push(row);
    }
    if dates.is_empty() {
        return Err(Error::Malformed { path: shown, line: 2, reason: "no data rows".into() });
    }
    Ok(RawTable { names, dates, values })
}

/// Loads a factor file. A column named `RF` (any case) is the risk-free
/// rate; without one the rate is zero. If any return magnitude exceeds one
/// the whole file is read as percent and divided by 100.
pub fn load_factors(path: &Path) -> Result<ReturnsPanel> {
    let t = read_table(path)?;
    let rf_col = t.names.iter().position(|n| n.eq_ignore_ascii_case("rf"));
    let asset_cols: Vec<usize> = (0..t.names.len()).filter(|&c| Some(c) != rf_col).collect();
    let percent = t.values.iter().flatten().any(|v| v.abs() > 1.0);
    let scale = if percent {
        log::info!("{}: values exceed 1 in magnitude, reading as percent", path.display());
        0.01
    } else {
        1.0
    };
    let n = t.dates.len();
    let excess = DMatrix::from_fn(n, asset_cols.len(), |r, c| t.values[r][asset_cols[c]] * scale);
    let risk_free = match rf_col {
        Some(c) => DVector::from_fn(n, |r, _| t.values[r][c] * scale),
        None => {
            log::info!("{}: no RF column, using a zero risk-free rate", path.display());
            DVector::zeros(n)
        }
    };
    let names = asset_cols.iter().map(|&c| t.names[c].clone()).collect();
    ReturnsPanel::new(t.dates, excess, risk_free, names)
}

pub fn load_signals(path: &Path) -> Result<SignalPanel> {
    let t = read_table(path)?;
    let n = t.dates.len();
    let raw = DMatrix::from_fn(n, t.names.len(), |r, c| t.values[r][c]);
    SignalPanel::new(t.dates, raw, t.names)
}

fn write_table(path: &Path, names: &[String], dates: &[YearMonth], cell: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (r, d) in dates.iter().enumerate() {
        let mut row = vec![d.to_string()];
        // `{}` prints the shortest representation that parses back to the same bits
        row.extend((0..names.len()).map(|c| {
            let v = cell(r, c);
            if v.is_nan() { String::new() } else { format!("{v}") }
        }));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

/// Writes asset columns followed by `RF`, in decimals.
pub fn write_factors(panel: &ReturnsPanel, path: &Path) -> Result<()> {
    let k = panel.n_assets();
    let mut names = panel.asset_names().to_vec();
    names.push("RF".into());
    write_table(path, &names, panel.dates(), |r, c| {
        if c < k { panel.excess()[(r, c)] } else { panel.risk_free()[r] }
    })
}

pub fn write_signals(panel: &SignalPanel, path: &Path) -> Result<()> {
    write_table(path, panel.signal_names(), panel.dates(), |r, c| panel.raw()[(r, c)])
}

/// Cumulative value index `C_t = prod_{s <= t} (1 + r_s)` per factor, so the
/// first date is `1 + r_0` relative to a base of one.
pub fn cumulative_index(returns: &ReturnsPanel) -> DMatrix<f64> {
    let r = returns.excess();
    let mut c = DMatrix::zeros(r.nrows(), r.ncols());
    for k in 0..r.ncols() {
        let mut level = 1.0;
        for t in 0..r.nrows() {
            level *= 1.0 + r[(t, k)];
            c[(t, k)] = level;
        }
    }
    c
}

/// Valuation, reversal and volatility timing signals, three per factor, in
/// the order `Val_0..Val_{K-1}, Rev_0.., Vol_0..`:
///
/// ```text
/// Val_t = -(log C_t - 1/60 sum_{j=0}^{59} log C_{t-j})
/// Rev_t = -(r_{t-1} - 1/36 sum_{j=0}^{35} r_{t-j})
/// Vol_t = -sqrt(12/11 * sample variance of r_{t-11..t})
/// ```
///
/// Months without enough history are missing.
pub fn build_timing_signals(returns: &ReturnsPanel, index: &DMatrix<f64>) -> Result<SignalPanel> {
    let r = returns.excess();
    let (n, k) = r.shape();
    if index.shape() != (n, k) {
        return Err(Error::Dimension("cumulative index must match the returns panel".into()));
    }
    if index.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("cumulative index must be positive".into()));
    }
    let mut raw = DMatrix::from_element(n, 3 * k, f64::NAN);
    for f in 0..k {
        let logc: Vec<f64> = (0..n).map(|t| index[(t, f)].ln()).collect();
        for t in 0..n {
            if t >= 59 {
                let avg = logc[t - 59..=t].iter().sum::<f64>() / 60.0;
                raw[(t, f)] = -(logc[t] - avg);
            }
            if t >= 35 {
                let avg = (t - 35..=t).map(|s| r[(s, f)]).sum::<f64>() / 36.0;
                raw[(t, k + f)] = -(r[(t - 1, f)] - avg);
            }
            if t >= 11 {
                let w: Vec<f64> = (t - 11..=t).map(|s| r[(s, f)]).collect();
                let m = w.iter().sum::<f64>() / 12.0;
                let var = w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 11.0;
                raw[(t, 2 * k + f)] = -(12.0 / 11.0 * var).sqrt();
            }
        }
    }
    let mut names = Vec::with_capacity(3 * k);
    for family in ["Val", "Rev", "Vol"] {
        names.extend((0..k).map(|f| format!("{family}_{f}")));
    }
    SignalPanel::new(returns.dates().to_vec(), raw, names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_signals: usize,
    pub n_periods: usize,
    /// Number of nonzero coefficients in the true policy.
    pub active: usize,
    /// Magnitude of each nonzero coefficient, in monthly return units per unit signal.
    pub theta_scale: f64,
    /// Monthly noise standard deviation.
    pub noise: f64,
    /// Unconditional monthly excess return of every asset.
    pub mean: f64,
    pub risk_free: f64,
    pub seed: u64,
    /// First signal month.
    pub start: YearMonth,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_assets: 3,
            n_signals: 10,
            n_periods: 240,
            active: 3,
            theta_scale: 0.01,
            noise: 0.04,
            mean: 0.005,
            risk_free: 0.002,
            seed: 0,
            start: YearMonth::new(1990, 1).expect("valid date"),
        }
    }
}

/// Panels with i.i.d. standard normal signals and next-month excess returns
/// `mean + theta* z_t + noise * eps`.
///
/// Signal `t` is dated `start + t` and its return `start + t + 1`, so the
/// panels align to `n_periods` pairs. Nonzero coefficients are placed on
/// assets other than the first (which carries the default benchmark) when
/// there is more than one asset. Each column draws from its own stream.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<(ReturnsPanel, SignalPanel, PolicyMatrix)> {
    let (k, l, t) = (spec.n_assets, spec.n_signals, spec.n_periods);
    if k == 0 || l == 0 || t < 60 {
        return Err(Error::InvalidParameter("synthetic data needs K >= 1, L >= 1 and T >= 60".into()));
    }
    if !(spec.noise >= 0.0) || !spec.theta_scale.is_finite() || !spec.mean.is_finite() {
        return Err(Error::InvalidParameter("noise must be >= 0 and scales finite".into()));
    }
    let first_row = usize::from(k > 1);
    let slots = (k - first_row) * l;
    if spec.active > slots {
        return Err(Error::InvalidParameter(format!("{} active coefficients exceed {slots} slots", spec.active)));
    }

    let stream = |id: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(id);
        rng
    };
    let mut theta = DMatrix::zeros(k, l);
    let mut rng = stream(0);
    for idx in sample(&mut rng, slots, spec.active).into_iter() {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        theta[(first_row + idx / l, idx % l)] = sign * spec.theta_scale;
    }

    let mut z: DMatrix<f64> = DMatrix::zeros(t, l);
    for c in 0..l {
        let mut rng = stream(1 + c as u64);
        for s in 0..t {
            z[(s, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let signal_mean = &z * theta.transpose();
    let mut excess = DMatrix::zeros(t, k);
    for j in 0..k {
        let mut rng = stream(1 + (l + j) as u64);
        for s in 0..t {
            let e: f64 = StandardNormal.sample(&mut rng);
            excess[(s, j)] = spec.mean + signal_mean[(s, j)] + spec.noise * e;
        }
    }

    let signal_dates: Vec<YearMonth> = (0..t).map(|s| spec.start.add_months(s as i64)).collect();
    let return_dates: Vec<YearMonth> = signal_dates.iter().map(|d| d.next()).collect();
    let returns = ReturnsPanel::new(
        return_dates,
        excess,
        DVector::from_element(t, spec.risk_free),
        (0..k).map(|j| format!("F{j}")).collect(),
    )?;
    let signals = SignalPanel::new(signal_dates, z, (0..l).map(|c| format!("S{c}")).collect())?;
    let policy = PolicyMatrix::new(theta, market_benchmark(k))?;
    Ok((returns, signals, policy))
}
