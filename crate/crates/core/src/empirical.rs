//! Rolling-window test of cross-sectionally uncorrelated factor residuals.
//!
//! Each tested month `m` uses a factor fit over the six calendar months
//! ending at `m`. The diagonal target comes from the self-normalized
//! residuals of the five earlier months, and the John-type test runs on the
//! residual days of month `m`.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::ObservationMatrix;
use crate::sphericity::{test_proportional_to, TargetSpec, TestKind, TestReport};

pub const WINDOW_MONTHS: usize = 6;
pub const TARGET_FLOOR: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;
const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `T × p`, one row per day.
    pub returns: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// `T × q`.
    pub factors: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorModel {
    Capm,
    Ff3,
}

impl FactorModel {
    pub fn factor_count(&self) -> usize {
        match self {
            FactorModel::Capm => 1,
            FactorModel::Ff3 => 3,
        }
    }
}

impl std::str::FromStr for FactorModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "capm" => Ok(FactorModel::Capm),
            "ff3" => Ok(FactorModel::Ff3),
            other => Err(Error::config(format!("unknown factor model '{other}' (expected capm or ff3)"))),
        }
    }
}

fn check_dates(dates: &[NaiveDate], path: &Path) -> Result<()> {
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::parse(path, format!("dates not strictly increasing at {} -> {}", w[0], w[1])));
    }
    Ok(())
}

/// Reads `date,col1,...,colK` with ISO dates and no missing values.
fn read_dated_csv(path: &Path) -> Result<(Vec<String>, Vec<NaiveDate>, DMatrix<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::parse(path, "header must start with 'date' followed by at least one column"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let k = names.len();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let row = line + 2;
        if record.len() != k + 1 {
            return Err(Error::parse(path, format!("row {row} has {} fields, expected {}", record.len(), k + 1)));
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
            .map_err(|e| Error::parse(path, format!("row {row}: bad date '{}': {e}", &record[0])))?;
        dates.push(date);
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, format!("row {row}, column '{}': '{field}' is not a number", names[j])))?;
            if !v.is_finite() {
                return Err(Error::parse(path, format!("row {row}, column '{}': non-finite value", names[j])));
            }
            values.push(v);
        }
    }
    if dates.is_empty() {
        return Err(Error::parse(path, "no data rows"));
    }
    check_dates(&dates, path)?;
    let data = DMatrix::from_row_slice(dates.len(), k, &values);
    Ok((names, dates, data))
}

pub fn load_returns(path: &Path) -> Result<ReturnPanel> {
    let (tickers, dates, returns) = read_dated_csv(path)?;
    Ok(ReturnPanel { dates, tickers, returns })
}

pub fn load_factors(path: &Path) -> Result<FactorPanel> {
    let (names, dates, factors) = read_dated_csv(path)?;
    Ok(FactorPanel { dates, names, factors })
}

/// Factor columns for `model`, on the return panel's dates.
fn aligned_factors(returns: &ReturnPanel, factors: &FactorPanel, model: FactorModel) -> Result<DMatrix<f64>> {
    let q = model.factor_count();
    let wanted: &[&str] = match model {
        FactorModel::Capm => &["mktrf"],
        FactorModel::Ff3 => &["mktrf", "smb", "hml"],
    };
    if factors.names.len() < q {
        return Err(Error::config(format!(
            "{model:?} needs {q} factor columns, file has {}",
            factors.names.len()
        )));
    }
    // named columns when present, otherwise the leading ones
    let cols: Vec<usize> = wanted
        .iter()
        .enumerate()
        .map(|(i, w)| factors.names.iter().position(|n| n.eq_ignore_ascii_case(w)).unwrap_or(i))
        .collect();
    let index: HashMap<NaiveDate, usize> = factors.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut out = DMatrix::zeros(returns.dates.len(), q);
    for (t, d) in returns.dates.iter().enumerate() {
        let row = *index
            .get(d)
            .ok_or_else(|| Error::config(format!("no factor data on {d}")))?;
        for (c, &col) in cols.iter().enumerate() {
            out[(t, c)] = factors.factors[(row, col)];
        }
    }
    Ok(out)
}

/// Residuals of each return column regressed on `[1, factors]`.
pub fn ols_residuals(returns: &DMatrix<f64>, factors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, q) = factors.shape();
    if returns.nrows() != t {
        return Err(Error::domain(format!("returns have {} rows, factors {t}", returns.nrows())));
    }
    if t <= q + 1 {
        return Err(Error::domain(format!("need more than {} observations, got {t}", q + 1)));
    }
    let design = DMatrix::from_fn(t, q + 1, |i, j| if j == 0 { 1.0 } else { factors[(i, j - 1)] });
    let qr = design.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|&d| !(d > RANK_TOL * scale)) {
        return Err(Error::domain("factor design matrix is rank deficient"));
    }
    let q_thin = qr.q();
    let fitted = &q_thin * (q_thin.transpose() * returns);
    Ok(returns - fitted)
}

/// Calendar month `(year, month)` of every day, with row ranges.
fn month_blocks(dates: &[NaiveDate]) -> Vec<((i32, u32), std::ops::Range<usize>)> {
    let mut blocks: Vec<((i32, u32), std::ops::Range<usize>)> = Vec::new();
    for (i, d) in dates.iter().enumerate() {
        let key = (d.year(), d.month());
        match blocks.last_mut() {
            Some((k, range)) if *k == key => range.end = i + 1,
            _ => blocks.push((key, i..i + 1)),
        }
    }
    blocks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingResult {
    /// `YYYY-MM`.
    pub month: String,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    /// First and last day of the five months behind the target.
    pub target_start: NaiveDate,
    pub target_end: NaiveDate,
    pub report: TestReport,
    pub sigma_d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedMonth {
    pub month: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingOutput {
    pub results: Vec<RollingResult>,
    pub skipped: Vec<SkippedMonth>,
}

struct WindowFit {
    residuals: DMatrix<f64>,
    /// Row offset of the tested month inside the window.
    test_rows: std::ops::Range<usize>,
}

fn fit_window(
    returns: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    blocks: &[((i32, u32), std::ops::Range<usize>)],
    m: usize,
) -> Result<WindowFit> {
    let start = blocks[m + 1 - WINDOW_MONTHS].1.start;
    let end = blocks[m].1.end;
    let y = returns.rows(start, end - start).into_owned();
    let f = factors.rows(start, end - start).into_owned();
    let residuals = ols_residuals(&y, &f)?;
    let test_rows = (blocks[m].1.start - start)..(end - start);
    Ok(WindowFit { residuals, test_rows })
}

fn month_label((y, m): (i32, u32)) -> String {
    format!("{y:04}-{m:02}")
}

fn self_normalized_second_moments(rows: &DMatrix<f64>) -> Vec<f64> {
    let (count, p) = rows.shape();
    let mut acc = vec![0.0; p];
    for row in rows.row_iter() {
        let norm_sq: f64 = row.iter().map(|v| v * v).sum();
        if norm_sq > 0.0 {
            for (a, v) in acc.iter_mut().zip(row.iter()) {
                *a += v * v / norm_sq;
            }
        }
    }
    acc.iter().map(|a| a / count as f64).collect()
}

fn test_month(
    returns: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    dates: &[NaiveDate],
    blocks: &[((i32, u32), std::ops::Range<usize>)],
    m: usize,
    alpha: f64,
) -> Result<RollingResult> {
    let fit = fit_window(returns, factors, blocks, m)?;
    let history = fit.residuals.rows(0, fit.test_rows.start).into_owned();
    let sigma_d = self_normalized_second_moments(&history);
    if let Some((j, v)) = sigma_d.iter().enumerate().find(|(_, v)| !(**v > TARGET_FLOOR)) {
        return Err(Error::DegenerateTarget(format!("diagonal entry {j} is {v:e}")));
    }
    let n = fit.test_rows.len();
    if n < 2 {
        return Err(Error::domain(format!("month has {n} trading day(s)")));
    }
    let current = fit.residuals.rows(fit.test_rows.start, n).transpose();
    let obs = ObservationMatrix::new(current)?;
    let report = test_proportional_to(&obs, &TargetSpec::Diagonal(sigma_d.clone()), TestKind::JhnSn, alpha)?;
    let first = blocks[m + 1 - WINDOW_MONTHS].1.start;
    Ok(RollingResult {
        month: month_label(blocks[m].0),
        window_start: dates[first],
        window_end: dates[blocks[m].1.end - 1],
        target_start: dates[first],
        target_end: dates[blocks[m].1.start - 1],
        report,
        sigma_d,
    })
}

/// Tests every month from the sixth onward; degenerate months are logged
/// and reported as skipped.
pub fn rolling_diag_test(
    returns: &ReturnPanel,
    factors: &FactorPanel,
    model: FactorModel,
    alpha: f64,
) -> Result<RollingOutput> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let f = aligned_factors(returns, factors, model)?;
    let blocks = month_blocks(&returns.dates);
    if blocks.len() < WINDOW_MONTHS {
        return Err(Error::domain(format!(
            "need at least {WINDOW_MONTHS} months of data, got {}",
            blocks.len()
        )));
    }
    let outcomes: Vec<(String, Result<RollingResult>)> = (WINDOW_MONTHS - 1..blocks.len())
        .into_par_iter()
        .map(|m| {
            let label = month_label(blocks[m].0);
            (label, test_month(&returns.returns, &f, &returns.dates, &blocks, m, alpha))
        })
        .collect();
    let mut out = RollingOutput { results: Vec::new(), skipped: Vec::new() };
    for (month, outcome) in outcomes {
        match outcome {
            Ok(r) => out.results.push(r),
            Err(e @ Error::Numerical(_)) => return Err(e),
            Err(e) => {
                warn!("skipping {month}: {e}");
                out.skipped.push(SkippedMonth { month, reason: e.to_string() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedNorm {
    pub date: NaiveDate,
    pub norm: f64,
}

/// `|ε̂ₜ|` for each day of each tested month, from the window that tests it.
pub fn residual_norm_series(returns: &ReturnPanel, factors: &FactorPanel, model: FactorModel) -> Result<Vec<DatedNorm>> {
    let f = aligned_factors(returns, factors, model)?;
    let blocks = month_blocks(&returns.dates);
    if blocks.len() < WINDOW_MONTHS {
        return Err(Error::domain(format!(
            "need at least {WINDOW_MONTHS} months of data, got {}",
            blocks.len()
        )));
    }
    let mut out = Vec::new();
    for m in WINDOW_MONTHS - 1..blocks.len() {
        let fit = match fit_window(&returns.returns, &f, &blocks, m) {
            Ok(fit) => fit,
            Err(e) => {
                warn!("skipping {}: {e}", month_label(blocks[m].0));
                continue;
            }
        };
        for (k, row) in fit.test_rows.clone().enumerate() {
            let norm = fit.residuals.row(row).norm();
            out.push(DatedNorm { date: returns.dates[blocks[m].1.start + k], norm });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (divisor `count - 1`); 0 for one value.
    pub sd: f64,
    /// Share of values in `[-1.96, 1.96]`.
    pub within_95: f64,
}

/// Linear interpolation between order statistics at `h = (n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_values(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::domain("cannot summarize an empty set of statistics"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        count: values.len(),
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        mean,
        sd,
        within_95: values.iter().filter(|v| v.abs() <= 1.96).count() as f64 / n,
    })
}

pub fn summarize_reports(results: &[RollingResult]) -> Result<Summary> {
    let z: Vec<f64> = results.iter().map(|r| r.report.z).collect();
    summarize_values(&z)
}
