//! Shared fixtures for integration tests.
#![allow(dead_code)]

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sncov::empirical::{FactorPanel, ReturnPanel};

pub fn gaussian_matrix(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(p, n, |_, _| rng.sample(StandardNormal))
}

/// Weekdays from `start` through `end`.
pub fn business_days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

/// Three-factor return simulator with uncorrelated, heteroskedastic
/// idiosyncratic returns `εₜ = ωₜ D^{1/2} Zₜ`.
#[derive(Debug, Clone)]
pub struct ThreeFactorSim {
    pub p: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub seed: u64,
    /// Hard-threshold the simulated intercepts to zero.
    pub zero_alpha: bool,
}

impl ThreeFactorSim {
    pub fn new(seed: u64) -> Self {
        ThreeFactorSim {
            p: 76,
            start: NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2016, 12, 31).unwrap(),
            seed,
            zero_alpha: true,
        }
    }

    pub fn simulate(&self) -> (ReturnPanel, FactorPanel) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let dates = business_days(self.start, self.end);
        let t_len = dates.len();
        let p = self.p;

        // daily factor moments of a market, size and value factor
        let mu_f = DVector::from_vec(vec![0.0006, 0.0001, 0.0]);
        let sd_f = [0.009, 0.005, 0.005];
        let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.3, 0.1, 1.0, 0.0, 0.3, 0.0, 1.0]);
        let cov_f = DMatrix::from_fn(3, 3, |i, j| corr[(i, j)] * sd_f[i] * sd_f[j]);
        let chol_f = cov_f.cholesky().unwrap().unpack();

        let loadings = DMatrix::from_fn(p, 3, |_, k| match k {
            0 => rng.random_range(0.8..1.5),
            1 => rng.random_range(-0.3..0.5),
            _ => rng.random_range(0.3..1.0),
        });
        let alpha = DVector::from_fn(p, |_, _| if self.zero_alpha { 0.0 } else { rng.random_range(-2e-4..2e-4) });

        // idiosyncratic volatilities spread over roughly a factor of three
        let idio_sd: Vec<f64> = (0..p).map(|_| 0.015 * (0.35 * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
        let total: f64 = idio_sd.iter().map(|s| s * s).sum();
        let d_sqrt: Vec<f64> = idio_sd.iter().map(|s| s / total.sqrt()).collect();
        let level = total.sqrt();

        let mut returns = DMatrix::zeros(t_len, p);
        let mut factors = DMatrix::zeros(t_len, 3);
        let mut h: f64 = 0.2;
        let mut prev_sq = 0.2;
        for t in 0..t_len {
            let e = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let f = &mu_f + &chol_f * e;
            h = 0.01 + 0.85 * h + 0.1 * prev_sq;
            let omega = h.sqrt();
            let mut sq = 0.0;
            for j in 0..p {
                let z: f64 = rng.sample(StandardNormal);
                let eps = omega * d_sqrt[j] * z;
                sq += eps * eps;
                returns[(t, j)] = alpha[j] + (loadings.row(j) * &f)[(0, 0)] + level * eps;
            }
            prev_sq = sq;
            factors.set_row(t, &f.transpose());
        }
        (
            ReturnPanel {
                dates: dates.clone(),
                tickers: (0..p).map(|j| format!("S{j:02}")).collect(),
                returns,
            },
            FactorPanel {
                dates,
                names: vec!["mktrf".into(), "smb".into(), "hml".into()],
                factors,
            },
        )
    }
}

/// Asymptotic Kolmogorov p-value of the one-sample statistic `d` at size `n`.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// One-sample KS statistic of `values` against Uniform(0, 1).
pub fn ks_uniform_statistic(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Writes `date,<names>` CSV files in the layout the loaders expect.
pub fn write_panels(dir: &std::path::Path, returns: &ReturnPanel, factors: &FactorPanel) -> (std::path::PathBuf, std::path::PathBuf) {
    fn write(path: &std::path::Path, dates: &[NaiveDate], names: &[String], m: &DMatrix<f64>) {
        let mut text = format!("date,{}\n", names.join(","));
        for (i, d) in dates.iter().enumerate() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
            text.push_str(&format!("{d},{}\n", row.join(",")));
        }
        std::fs::write(path, text).unwrap();
    }
    let r = dir.join("returns.csv");
    let f = dir.join("factors.csv");
    write(&r, &returns.dates, &returns.tickers, &returns.returns);
    write(&f, &factors.dates, &factors.names, &factors.factors);
    (r, f)
}
