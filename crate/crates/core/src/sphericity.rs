//! Sphericity tests on the self-normalized sample covariance matrix.
//!
//! All tests share one pipeline: build `S̃ₙ`, reduce it to a raw statistic,
//! standardize with the matching CLT, and report a two-sided normal p-value.
//! Testing `Σ ∝ Σ₀` whitens each column by `Σ₀^{-1/2}` first.

use std::fmt;
use std::str::FromStr;

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use libm::erfc;

use crate::clt::{jhn_from_sum_squares, log_center_scale, moment_mu, moment_sigma2};
use crate::error::{Error, Result};
use crate::spectra::{mp_log_integral, ObservationMatrix, SncMatrix, SpectralSummary};

pub const MAX_TEST_MOMENT: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    LrSn,
    JhnSn,
    MomentK(u32),
}

impl TestKind {
    fn validate(&self) -> Result<()> {
        match *self {
            TestKind::MomentK(k) if !(2..=MAX_TEST_MOMENT).contains(&k) => Err(Error::domain(format!(
                "moment test order must be in 2..={MAX_TEST_MOMENT}, got {k}"
            ))),
            _ => Ok(()),
        }
    }

    /// Whether the test is defined at `yₙ = p/n`.
    pub fn supports_ratio(&self, y_n: f64) -> bool {
        !matches!(self, TestKind::LrSn) || y_n < 1.0
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestKind::LrSn => write!(f, "lr-sn"),
            TestKind::JhnSn => write!(f, "jhn-sn"),
            TestKind::MomentK(k) => write!(f, "moment:{k}"),
        }
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "lr-sn" | "lr_sn" => Ok(TestKind::LrSn),
            "jhn-sn" | "jhn_sn" => Ok(TestKind::JhnSn),
            other => {
                let k = other
                    .strip_prefix("moment:")
                    .and_then(|k| k.parse::<u32>().ok())
                    .ok_or_else(|| Error::config(format!("unknown test '{s}' (expected lr-sn, jhn-sn or moment:k)")))?;
                let kind = TestKind::MomentK(k);
                kind.validate()?;
                Ok(kind)
            }
        }
    }
}

impl Serialize for TestKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TestKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Identity,
    Diagonal,
    FullPsd,
}

/// Hypothesized covariance shape `Σ₀`, up to scale.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Identity,
    Diagonal(Vec<f64>),
    FullPsd(DMatrix<f64>),
}

impl TargetSpec {
    pub fn kind(&self) -> TargetKind {
        match self {
            TargetSpec::Identity => TargetKind::Identity,
            TargetSpec::Diagonal(_) => TargetKind::Diagonal,
            TargetSpec::FullPsd(_) => TargetKind::FullPsd,
        }
    }

    /// Maps every column `Yᵢ` to `Σ₀^{-1/2} Yᵢ`.
    pub fn whiten(&self, obs: &ObservationMatrix) -> Result<ObservationMatrix> {
        let p = obs.p();
        match self {
            TargetSpec::Identity => Ok(obs.clone()),
            TargetSpec::Diagonal(d) => {
                if d.len() != p {
                    return Err(Error::domain(format!("diagonal target has {} entries, panel has p = {p}", d.len())));
                }
                if let Some((j, v)) = d.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                    return Err(Error::domain(format!("diagonal target entry {j} is {v}, must be positive")));
                }
                let mut data = obs.data().clone();
                for (j, v) in d.iter().enumerate() {
                    let s = v.sqrt();
                    data.row_mut(j).iter_mut().for_each(|x| *x /= s);
                }
                ObservationMatrix::new(data)
            }
            TargetSpec::FullPsd(m) => {
                let w = inverse_sqrt(m, p)?;
                ObservationMatrix::new(w * obs.data())
            }
        }
    }
}

/// Symmetric inverse square root `V Λ^{-1/2} Vᵀ` of a positive definite matrix.
fn inverse_sqrt(m: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    if m.shape() != (p, p) {
        return Err(Error::domain(format!("target is {}x{}, panel has p = {p}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("target has non-finite entries"));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::domain(format!("target is not symmetric (max asymmetry {asym:e})")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::domain("target is not positive definite"));
    }
    let eig = m.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.max();
    if eig.eigenvalues.iter().any(|&l| !(l > 1e-12 * max_eig)) {
        return Err(Error::domain("target is numerically singular"));
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test_name: TestKind,
    /// Raw statistic: `Σ log λᵢ`, `T̃ₙ`, or `G(x^k)`.
    pub statistic: f64,
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub p: usize,
    pub n: usize,
    pub y_n: f64,
    pub target: TargetKind,
}

/// `2(1 - Φ(|z|))`.
pub fn two_sided_p_value(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Raw statistic and its standardized value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardized {
    pub statistic: f64,
    pub z: f64,
}

fn lr_from_log_sum(log_sum: f64, p: usize, n: usize) -> Result<Standardized> {
    let cs = log_center_scale(p, n)?;
    Ok(Standardized {
        statistic: log_sum,
        z: cs.standardize(log_sum),
    })
}

fn jhn_from_squares(sum_squares: f64, p: usize, n: usize) -> Standardized {
    let y = p as f64 / n as f64;
    Standardized {
        statistic: sum_squares / y - n as f64 - p as f64,
        z: jhn_from_sum_squares(sum_squares, p, n),
    }
}

fn moment_from_power_sum(power_sum: f64, k: u32, p: usize, n: usize) -> Result<Standardized> {
    let y = p as f64 / n as f64;
    let g = power_sum - p as f64 * crate::mp::mp_moment(k, y)?;
    let z = (g - moment_mu(k, y)?) / moment_sigma2(k, y)?.sqrt();
    Ok(Standardized { statistic: g, z })
}

fn check_regime(kind: TestKind, p: usize, n: usize) -> Result<()> {
    kind.validate()?;
    let y = p as f64 / n as f64;
    if !kind.supports_ratio(y) {
        return Err(Error::UnsupportedRegime(format!("{kind} needs p < n, got p = {p}, n = {n}")));
    }
    Ok(())
}

/// Standardized statistic from precomputed eigenvalues.
pub fn standardize_summary(summary: &SpectralSummary, kind: TestKind) -> Result<Standardized> {
    let (p, n) = (summary.p, summary.n);
    check_regime(kind, p, n)?;
    match kind {
        TestKind::LrSn => {
            mp_log_integral(summary.y_n)?;
            lr_from_log_sum(summary.log_sum()?, p, n)
        }
        TestKind::JhnSn => Ok(jhn_from_squares(summary.power_sum(2), p, n)),
        TestKind::MomentK(k) => moment_from_power_sum(summary.power_sum(k), k, p, n),
    }
}

/// Standardized statistic from `S̃ₙ`, skipping the eigendecomposition when
/// a trace identity or a Cholesky factor suffices.
pub fn standardize_snc(snc: SncMatrix, kind: TestKind) -> Result<Standardized> {
    let (p, n) = snc.shape();
    check_regime(kind, p, n)?;
    match kind {
        TestKind::JhnSn => Ok(jhn_from_squares(snc.sum_squares(), p, n)),
        TestKind::MomentK(2) => moment_from_power_sum(snc.sum_squares(), 2, p, n),
        TestKind::LrSn => match snc.log_det() {
            Some(ld) => lr_from_log_sum(ld, p, n),
            None => {
                debug!("Cholesky log-determinant unavailable, using eigenvalues");
                standardize_summary(&snc.summary()?, kind)
            }
        },
        TestKind::MomentK(_) => standardize_summary(&snc.summary()?, kind),
    }
}

fn report(st: Standardized, kind: TestKind, alpha: f64, p: usize, n: usize, target: TargetKind) -> TestReport {
    let p_value = two_sided_p_value(st.z);
    TestReport {
        test_name: kind,
        statistic: st.statistic,
        z: st.z,
        p_value,
        alpha,
        reject: p_value < alpha,
        p,
        n,
        y_n: p as f64 / n as f64,
        target,
    }
}

/// Runs `kind` against `H₀: Σ ∝ I`.
pub fn run_test(obs: &ObservationMatrix, kind: TestKind, alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    let st = standardize_snc(SncMatrix::build(obs), kind)?;
    Ok(report(st, kind, alpha, obs.p(), obs.n(), TargetKind::Identity))
}

pub fn test_lr_sn(obs: &ObservationMatrix, alpha: f64) -> Result<TestReport> {
    run_test(obs, TestKind::LrSn, alpha)
}

pub fn test_jhn_sn(obs: &ObservationMatrix, alpha: f64) -> Result<TestReport> {
    run_test(obs, TestKind::JhnSn, alpha)
}

pub fn test_moment_k(obs: &ObservationMatrix, k: u32, alpha: f64) -> Result<TestReport> {
    run_test(obs, TestKind::MomentK(k), alpha)
}

/// Runs `kind` against `H₀: Σ ∝ Σ₀`.
pub fn test_proportional_to(
    obs: &ObservationMatrix,
    target: &TargetSpec,
    kind: TestKind,
    alpha: f64,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    kind.validate()?;
    let whitened = target.whiten(obs)?;
    let mut rep = run_test(&whitened, kind, alpha)?;
    rep.target = target.kind();
    Ok(rep)
}
