//! Size and power experiments.
//!
//! Every replication draws its panel from a seed derived from the master
//! seed and the cell coordinates, so results are independent of scheduling
//! and of which other cells are present.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_panel, replication_seed, GenModel, ModelKind, SigmaSpec};
use crate::error::{Error, Result};
use crate::spectra::SncMatrix;
use crate::sphericity::{standardize_snc, two_sided_p_value, TestKind};

pub const DEFAULT_REPLICATIONS: usize = 2000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 42;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_sigma() -> SigmaSpec {
    SigmaSpec::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    #[serde(default = "default_sigma")]
    pub sigma: SigmaSpec,
    pub tests: Vec<TestKind>,
    pub p_list: Vec<usize>,
    pub y_list: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
}

/// Sample size for dimension `p` at ratio `y`.
pub fn sample_size(p: usize, y: f64) -> usize {
    (p as f64 / y).round() as usize
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.tests.is_empty() || self.p_list.is_empty() || self.y_list.is_empty() {
            return Err(Error::config("tests, p_list and y_list must be nonempty"));
        }
        self.sigma.validate().map_err(|e| Error::config(e.to_string()))?;
        for &test in &self.tests {
            if let TestKind::MomentK(k) = test {
                if !(2..=crate::sphericity::MAX_TEST_MOMENT).contains(&k) {
                    return Err(Error::config(format!("moment order {k} is outside 2..=8")));
                }
            }
        }
        for &y in &self.y_list {
            if !(y.is_finite() && y > 0.0) {
                return Err(Error::config(format!("ratio must be positive, got {y}")));
            }
            for &test in &self.tests {
                if !test.supports_ratio(y) {
                    return Err(Error::config(format!("{test} is undefined at y = {y} (needs y < 1)")));
                }
            }
            for &p in &self.p_list {
                let n = sample_size(p, y);
                if p < 2 || n < 2 {
                    return Err(Error::config(format!("cell p = {p}, y = {y} gives n = {n}; need p, n >= 2")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Vec<ExperimentConfig>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(ExperimentConfig),
            Many(Vec<ExperimentConfig>),
        }
        let parsed: OneOrMany =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, format!("invalid experiment config: {e}")))?;
        Ok(match parsed {
            OneOrMany::One(c) => vec![c],
            OneOrMany::Many(v) => v,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: ModelKind,
    pub sigma: SigmaSpec,
    pub test: TestKind,
    pub p: usize,
    pub n: usize,
    pub y: f64,
    pub replications: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub monte_carlo_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub design: String,
    pub alpha: f64,
    pub master_seed: u64,
    pub cells: Vec<CellResult>,
    /// Omitted unless requested, so repeated runs serialize identically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

impl ExperimentReport {
    pub fn cell(&self, p: usize, y: f64, test: TestKind) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.p == p && c.y == y && c.test == test)
    }
}

pub fn monte_carlo_se(rate: f64, replications: usize) -> f64 {
    (rate * (1.0 - rate) / replications as f64).sqrt()
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(Error::config("thread count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))
}

/// Standardized values `z[t][r]` for every test `t` and replication `r` of
/// one `(p, y)` cell. Must run inside the caller's thread pool.
pub fn cell_z_values(
    model: ModelKind,
    sigma: SigmaSpec,
    p: usize,
    y: f64,
    tests: &[TestKind],
    replications: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = sample_size(p, y);
    let per_rep: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(master_seed, p, y, model, sigma, r as u64);
            let obs = gen_panel(&GenModel { kind: model, sigma, p, n, seed })?;
            let snc = SncMatrix::build(&obs);
            tests
                .iter()
                .map(|&t| Ok(standardize_snc(snc.clone(), t)?.z))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..tests.len())
        .map(|t| per_rep.iter().map(|zs| zs[t]).collect())
        .collect())
}

fn run_config(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    let mut cells = Vec::new();
    for &y in &cfg.y_list {
        for &p in &cfg.p_list {
            let start = Instant::now();
            let z = cell_z_values(cfg.model, cfg.sigma, p, y, &cfg.tests, cfg.replications, cfg.master_seed)?;
            for (&test, zs) in cfg.tests.iter().zip(&z) {
                let rejections = zs.iter().filter(|&&z| two_sided_p_value(z) < cfg.alpha).count();
                let rate = rejections as f64 / cfg.replications as f64;
                cells.push(CellResult {
                    model: cfg.model,
                    sigma: cfg.sigma,
                    test,
                    p,
                    n: sample_size(p, y),
                    y,
                    replications: cfg.replications,
                    rejections,
                    rejection_rate: rate,
                    monte_carlo_se: monte_carlo_se(rate, cfg.replications),
                });
            }
            info!(
                "cell model={} sigma={} p={p} y={y}: {} replications in {:.2?}",
                cfg.model,
                cfg.sigma,
                cfg.replications,
                start.elapsed()
            );
        }
    }
    Ok(cells)
}

/// Runs every config of a design on `threads` workers; configs are
/// validated before any replication starts.
pub fn run_design(name: &str, configs: &[ExperimentConfig], threads: usize) -> Result<ExperimentReport> {
    if configs.is_empty() {
        return Err(Error::config("design has no experiments"));
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let alpha = configs[0].alpha;
    let master_seed = configs[0].master_seed;
    if configs.iter().any(|c| c.alpha != alpha || c.master_seed != master_seed) {
        return Err(Error::config("all experiments of a design must share alpha and master_seed"));
    }
    let pool = thread_pool(threads)?;
    let start = Instant::now();
    let mut cells = Vec::new();
    for cfg in configs {
        cells.extend(pool.install(|| run_config(cfg))?);
    }
    info!("design {name} finished in {:.2?}", start.elapsed());
    Ok(ExperimentReport {
        design: name.to_string(),
        alpha,
        master_seed,
        cells,
        wall_time_secs: None,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    run_design("custom", std::slice::from_ref(cfg), threads)
}

/// Built-in size and power tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    /// Elliptical, `Σ = I`.
    Table3,
    /// Elliptical, `Σ = (0.1^{|i-j|})`.
    Table4,
    /// GARCH with t(4) innovations, `Σ = I`.
    Table5,
    /// GARCH with t(4) innovations, `Σ = (0.1^{|i-j|})`.
    Table6,
}

pub const TABLE_P: [usize; 3] = [100, 200, 500];

impl TableId {
    pub fn name(&self) -> &'static str {
        match self {
            TableId::Table3 => "table3",
            TableId::Table4 => "table4",
            TableId::Table5 => "table5",
            TableId::Table6 => "table6",
        }
    }

    fn model_sigma(&self) -> (ModelKind, SigmaSpec) {
        match self {
            TableId::Table3 => (ModelKind::Elliptical, SigmaSpec::Identity),
            TableId::Table4 => (ModelKind::Elliptical, SigmaSpec::Toeplitz(0.1)),
            TableId::Table5 => (ModelKind::GarchT4, SigmaSpec::Identity),
            TableId::Table6 => (ModelKind::GarchT4, SigmaSpec::Toeplitz(0.1)),
        }
    }

    /// Column order: `(y, test)`.
    pub fn columns() -> [(f64, TestKind); 3] {
        [(0.5, TestKind::LrSn), (0.5, TestKind::JhnSn), (2.0, TestKind::JhnSn)]
    }

    /// Both log and John tests at `y = 0.5`; only the John test at `y = 2`,
    /// where the log statistic is undefined.
    pub fn configs(&self, replications: usize, master_seed: u64) -> Vec<ExperimentConfig> {
        let (model, sigma) = self.model_sigma();
        let base = ExperimentConfig {
            model,
            sigma,
            tests: vec![TestKind::LrSn, TestKind::JhnSn],
            p_list: TABLE_P.to_vec(),
            y_list: vec![0.5],
            replications,
            alpha: DEFAULT_ALPHA,
            master_seed,
        };
        let wide = ExperimentConfig {
            tests: vec![TestKind::JhnSn],
            y_list: vec![2.0],
            ..base.clone()
        };
        vec![base, wide]
    }
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table3" => Ok(TableId::Table3),
            "table4" => Ok(TableId::Table4),
            "table5" => Ok(TableId::Table5),
            "table6" => Ok(TableId::Table6),
            other => Err(Error::config(format!("unknown design '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Table(TableId),
    /// Rows and columns taken from the report itself.
    Custom,
}

fn percent(rate: f64) -> String {
    format!("{:.1}", 100.0 * rate)
}

fn column_label(y: f64, test: TestKind) -> String {
    format!("y={y} {}", test.to_string().to_uppercase())
}

fn write_grid(rows: &[usize], cols: &[(f64, TestKind)], report: &ExperimentReport) -> Result<String> {
    let mut grid = Vec::with_capacity(rows.len());
    for &p in rows {
        let mut line = Vec::with_capacity(cols.len());
        for &(y, test) in cols {
            let cell = report.cell(p, y, test).ok_or_else(|| {
                Error::IncompleteReport(format!("no result for p = {p}, y = {y}, {test}"))
            })?;
            line.push(percent(cell.rejection_rate));
        }
        grid.push(line);
    }
    let labels: Vec<String> = cols.iter().map(|&(y, t)| column_label(y, t)).collect();
    let widths: Vec<usize> = labels.iter().map(|l| l.len().max(6)).collect();
    let mut out = String::new();
    write!(out, "{:>6}", "p").unwrap();
    for (l, w) in labels.iter().zip(&widths) {
        write!(out, "  {l:>w$}").unwrap();
    }
    out.push('\n');
    for (p, line) in rows.iter().zip(&grid) {
        write!(out, "{p:>6}").unwrap();
        for (v, w) in line.iter().zip(&widths) {
            write!(out, "  {v:>w$}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Rejection percentages with one decimal.
pub fn render_table(report: &ExperimentReport, layout: Layout) -> Result<String> {
    if report.cells.is_empty() {
        return Err(Error::IncompleteReport("report has no cells".into()));
    }
    match layout {
        Layout::Table(_) => write_grid(&TABLE_P, &TableId::columns(), report),
        Layout::Custom => {
            let rows: Vec<usize> = report.cells.iter().map(|c| c.p).collect::<BTreeSet<_>>().into_iter().collect();
            let mut cols: Vec<(f64, TestKind)> = Vec::new();
            for c in &report.cells {
                if !cols.contains(&(c.y, c.test)) {
                    cols.push((c.y, c.test));
                }
            }
            write_grid(&rows, &cols, report)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelKind::Elliptical,
            sigma: SigmaSpec::Identity,
            tests: vec![TestKind::LrSn, TestKind::JhnSn, TestKind::MomentK(3)],
            p_list: vec![10, 20],
            y_list: vec![0.5],
            replications: 40,
            alpha: 0.05,
            master_seed: 7,
        }
    }

    #[test]
    fn validation() {
        let mut cfg = small_config();
        cfg.y_list = vec![2.0];
        assert!(matches!(run_experiment(&cfg, 1), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.replications = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.p_list = vec![1];
        assert!(cfg.validate().is_err());
        assert!(matches!(run_experiment(&small_config(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn report_fields() {
        let rep = run_experiment(&small_config(), 2).unwrap();
        assert_eq!(rep.cells.len(), 6);
        for c in &rep.cells {
            assert_eq!(c.rejection_rate * c.replications as f64, c.rejections as f64);
            let se = (c.rejection_rate * (1.0 - c.rejection_rate) / c.replications as f64).sqrt();
            assert!((c.monte_carlo_se - se).abs() <= 1e-12);
            assert_eq!(c.n, 2 * c.p);
        }
        assert!(rep.wall_time_secs.is_none());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let a = run_experiment(&small_config(), 1).unwrap();
        let b = run_experiment(&small_config(), 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn cells_do_not_interfere() {
        let full = run_experiment(&small_config(), 1).unwrap();
        let mut only = small_config();
        only.p_list = vec![20];
        let part = run_experiment(&only, 1).unwrap();
        for c in &part.cells {
            assert_eq!(Some(c), full.cell(c.p, c.y, c.test));
        }
    }

    #[test]
    fn rendering() {
        let rep = run_experiment(&small_config(), 1).unwrap();
        let text = render_table(&rep, Layout::Custom).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("MOMENT:3"));
        assert!(matches!(render_table(&rep, Layout::Table(TableId::Table3)), Err(Error::IncompleteReport(_))));
        let empty = ExperimentReport { cells: vec![], ..rep.clone() };
        assert!(matches!(render_table(&empty, Layout::Custom), Err(Error::IncompleteReport(_))));

        let mut one = small_config();
        one.p_list = vec![10];
        one.tests = vec![TestKind::JhnSn];
        let rep = run_experiment(&one, 1).unwrap();
        let text = render_table(&rep, Layout::Custom).unwrap();
        let body: Vec<&str> = text.lines().collect();
        assert_eq!(body.len(), 2);
        let pct = percent(rep.cells[0].rejection_rate);
        assert!(body[1].trim_end().ends_with(&pct));
    }

    #[test]
    fn table_designs() {
        for id in [TableId::Table3, TableId::Table4, TableId::Table5, TableId::Table6] {
            let cfgs = id.configs(10, 1);
            for c in &cfgs {
                c.validate().unwrap();
            }
            assert_eq!(id.name().parse::<TableId>().unwrap(), id);
        }
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = small_config();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"moment:3\""));
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal: ExperimentConfig =
            serde_json::from_str(r#"{"model":"garch-t4","tests":["jhn-sn"],"p_list":[50],"y_list":[2]}"#).unwrap();
        assert_eq!(minimal.replications, DEFAULT_REPLICATIONS);
        assert_eq!(minimal.sigma, SigmaSpec::Identity);
    }
}
