//! Simulated panels `Yᵢ = ωᵢ Σ^{1/2} Z̃ᵢ`.
//!
//! Each model owns two independent ChaCha streams derived from its seed:
//! one for the core vectors `Z̃ᵢ` and one for the scalars `ωᵢ`. Because the
//! core stream is shared, the iid and elliptical panels built from one seed
//! differ only by the per-column scalars.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::spectra::{column_norm_sq, ObservationMatrix};

const CORE_STREAM: u64 = 0;
const SCALE_STREAM: u64 = 1;

pub const GARCH_INTERCEPT: f64 = 0.01;
pub const GARCH_PERSISTENCE: f64 = 0.85;
pub const GARCH_SHOCK: f64 = 0.1;
/// Fixed point of the variance recursion when `|Y|²/tr Σ ≈ ω²`.
pub const GARCH_START: f64 = GARCH_INTERCEPT / (1.0 - GARCH_PERSISTENCE - GARCH_SHOCK);
pub const GARCH_BURN_IN: usize = 100;

/// Population covariance shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSpec {
    Identity,
    /// `Σᵢⱼ = ρ^{|i-j|}`.
    Toeplitz(f64),
}

impl SigmaSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaSpec::Toeplitz(rho) if !(rho.is_finite() && rho.abs() < 1.0) => {
                Err(Error::domain(format!("Toeplitz parameter must lie in (-1, 1), got {rho}")))
            }
            _ => Ok(()),
        }
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        match *self {
            SigmaSpec::Identity => DMatrix::identity(p, p),
            SigmaSpec::Toeplitz(rho) => DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32)),
        }
    }

    pub fn trace(&self, p: usize) -> f64 {
        p as f64
    }

    /// Stable identifier used in seed derivation.
    fn tag(&self) -> u64 {
        match *self {
            SigmaSpec::Identity => 0,
            SigmaSpec::Toeplitz(rho) => rho.to_bits() | 1,
        }
    }

    /// Multiplies the columns of `e` by the Cholesky factor in place.
    ///
    /// For Toeplitz this is the AR(1) recursion
    /// `zᵢ = ρ zᵢ₋₁ + √(1-ρ²) eᵢ`, which is the lower factor applied in O(p).
    fn color(&self, col: &mut [f64]) {
        if let SigmaSpec::Toeplitz(rho) = *self {
            let s = (1.0 - rho * rho).sqrt();
            for i in 1..col.len() {
                col[i] = rho * col[i - 1] + s * col[i];
            }
        }
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaSpec::Identity => write!(f, "identity"),
            SigmaSpec::Toeplitz(rho) => write!(f, "toeplitz:{rho}"),
        }
    }
}

impl FromStr for SigmaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "identity" {
            return Ok(SigmaSpec::Identity);
        }
        let rho = s
            .strip_prefix("toeplitz:")
            .and_then(|r| r.parse::<f64>().ok())
            .ok_or_else(|| Error::config(format!("unknown sigma '{s}' (expected identity or toeplitz:<rho>)")))?;
        let spec = SigmaSpec::Toeplitz(rho);
        spec.validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(spec)
    }
}

impl Serialize for SigmaSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SigmaSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(alias = "iid-gaussian")]
    Iid,
    Elliptical,
    GarchT4,
}

impl ModelKind {
    fn tag(&self) -> u64 {
        match self {
            ModelKind::Iid => 1,
            ModelKind::Elliptical => 2,
            ModelKind::GarchT4 => 3,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Iid => "iid",
            ModelKind::Elliptical => "elliptical",
            ModelKind::GarchT4 => "garch-t4",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iid" | "iid-gaussian" => Ok(ModelKind::Iid),
            "elliptical" => Ok(ModelKind::Elliptical),
            "garch-t4" | "garch" => Ok(ModelKind::GarchT4),
            other => Err(Error::config(format!(
                "unknown model '{other}' (expected iid, elliptical or garch-t4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenModel {
    pub kind: ModelKind,
    pub sigma: SigmaSpec,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
}

impl GenModel {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.n < 2 {
            return Err(Error::domain(format!("p and n must be at least 2, got p = {}, n = {}", self.p, self.n)));
        }
        self.sigma.validate()
    }
}

/// Generated panel plus the scalars that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub obs: ObservationMatrix,
    /// `ωᵢ²` per column (1 for the iid model).
    pub omega_sq: Vec<f64>,
    /// `(ω², |Y|²)` of the last burn-in column, for the GARCH model.
    pub warm_state: Option<(f64, f64)>,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `master` with a fixed, platform-independent hash.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(master), |h, &part| mix(h ^ mix(part)))
}

/// Seed of replication `rep` within the cell `(p, y, model, sigma)`.
pub fn replication_seed(master: u64, p: usize, y: f64, kind: ModelKind, sigma: SigmaSpec, rep: u64) -> u64 {
    derive_seed(master, &[p as u64, y.to_bits(), kind.tag(), sigma.tag(), rep])
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draw of `T/√2` with `T ~ t(4)`: a normal over `√(χ²₄/4)`.
pub fn std_t4<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    // χ²₄ = -2 log(U₁U₂) with Uᵢ in (0, 1]
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = 1.0 - rng.random::<f64>();
    let chi2 = -2.0 * (u1 * u2).ln();
    z / (chi2 / 4.0).sqrt() / std::f64::consts::SQRT_2
}

pub fn std_t4_sample<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| std_t4(rng)).collect()
}

/// Lower Cholesky factor `L` with `L Lᵀ = Σ`.
pub fn sigma_sqrt(spec: SigmaSpec, p: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    match spec {
        SigmaSpec::Identity => Ok(DMatrix::identity(p, p)),
        SigmaSpec::Toeplitz(_) => spec
            .matrix(p)
            .cholesky()
            .map(|c| c.unpack())
            .ok_or_else(|| Error::domain(format!("{spec} is not positive definite at p = {p}"))),
    }
}

fn fill_core<R: Rng + ?Sized>(kind: ModelKind, sigma: SigmaSpec, col: &mut [f64], rng: &mut R) {
    match kind {
        ModelKind::GarchT4 => col.iter_mut().for_each(|v| *v = std_t4(rng)),
        _ => col.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
    }
    sigma.color(col);
}

pub fn generate(model: &GenModel) -> Result<GeneratedPanel> {
    model.validate()?;
    let GenModel { kind, sigma, p, n, seed } = *model;
    let mut core = stream(seed, CORE_STREAM);
    let mut scale = stream(seed, SCALE_STREAM);
    let mut data = DMatrix::<f64>::zeros(p, n);
    let mut omega_sq = Vec::with_capacity(n);
    let mut warm_state = None;

    match kind {
        ModelKind::Iid | ModelKind::Elliptical => {
            for mut col in data.column_iter_mut() {
                fill_core(kind, sigma, col.as_mut_slice(), &mut core);
                if kind == ModelKind::Elliptical {
                    let w: f64 = scale.sample::<f64, _>(StandardNormal).abs();
                    col.iter_mut().for_each(|v| *v *= w);
                    omega_sq.push(w * w);
                } else {
                    omega_sq.push(1.0);
                }
            }
        }
        ModelKind::GarchT4 => {
            let tr = sigma.trace(p);
            let mut buf = vec![0.0; p];
            let mut w2 = GARCH_START;
            let mut prev_norm_sq = 0.0;
            for step in 0..GARCH_BURN_IN + n {
                if step > 0 {
                    w2 = GARCH_INTERCEPT + GARCH_PERSISTENCE * w2 + GARCH_SHOCK * prev_norm_sq / tr;
                }
                fill_core(kind, sigma, &mut buf, &mut core);
                let w = w2.sqrt();
                buf.iter_mut().for_each(|v| *v *= w);
                if step >= GARCH_BURN_IN {
                    let mut col = data.column_mut(step - GARCH_BURN_IN);
                    col.copy_from_slice(&buf);
                    omega_sq.push(w2);
                } else if step + 1 == GARCH_BURN_IN {
                    warm_state = Some((w2, column_norm_sq(&DVector::from_column_slice(&buf))));
                }
                prev_norm_sq = column_norm_sq(&DVector::from_column_slice(&buf));
            }
        }
    }

    Ok(GeneratedPanel {
        obs: ObservationMatrix::new(data)?,
        omega_sq,
        warm_state,
    })
}

pub fn gen_panel(model: &GenModel) -> Result<ObservationMatrix> {
    Ok(generate(model)?.obs)
}
