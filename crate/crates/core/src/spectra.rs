//! Self-normalized sample covariance `S̃ₙ = (p/n) Σᵢ YᵢYᵢᵀ / |Yᵢ|²` and
//! its linear spectral statistics.
//!
//! Observations are never demeaned. A zero column contributes nothing
//! (the 0/0 = 0 convention), in which case the trace identity
//! `tr S̃ₙ = p` no longer holds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp::{mp_moment, MpLaw, MAX_MOMENT_ORDER};

/// Eigenvalues below this fraction of the largest one count as zero.
pub const EIGEN_FLOOR_REL: f64 = 1e-10;

/// A `p × n` panel; column `i` is observation `Yᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    data: DMatrix<f64>,
}

impl ObservationMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (p, n) = data.shape();
        if p < 2 || n < 2 {
            return Err(Error::domain(format!("panel must be at least 2 x 2, got {p} x {n}")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite entry at row {}, column {}",
                pos % p,
                pos / p
            )));
        }
        Ok(ObservationMatrix { data })
    }

    /// Builds a panel from `p` rows of length `n`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::domain("rows have unequal lengths"));
        }
        Self::new(DMatrix::from_fn(p, n, |i, j| rows[i][j]))
    }

    /// Builds a `p × n` panel from `p * n` column-major values.
    pub fn from_column_major(p: usize, n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != p * n {
            return Err(Error::domain(format!("expected {} values for {p} x {n}, got {}", p * n, values.len())));
        }
        Self::new(DMatrix::from_column_slice(p, n, values))
    }

    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn y_n(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.data.column_iter().map(|c| c.norm()).collect()
    }
}

/// Divides every column by its Euclidean norm; zero columns stay zero.
pub fn self_normalize(obs: &ObservationMatrix) -> ObservationMatrix {
    let mut data = obs.data.clone();
    for mut col in data.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    ObservationMatrix { data }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenRoute {
    /// `p × p` matrix `(p/n) X Xᵀ`.
    Outer,
    /// `n × n` matrix `(p/n) Xᵀ X`, padded with `p - n` zeros.
    Gram,
}

impl EigenRoute {
    pub fn for_shape(p: usize, n: usize) -> Self {
        if p <= n {
            EigenRoute::Outer
        } else {
            EigenRoute::Gram
        }
    }
}

/// The scaled compact matrix sharing the nonzero spectrum of `S̃ₙ`.
#[derive(Debug, Clone)]
pub struct SncMatrix {
    p: usize,
    n: usize,
    route: EigenRoute,
    matrix: DMatrix<f64>,
}

impl SncMatrix {
    pub fn build(obs: &ObservationMatrix) -> Self {
        Self::build_via(obs, EigenRoute::for_shape(obs.p(), obs.n()))
    }

    pub fn build_via(obs: &ObservationMatrix, route: EigenRoute) -> Self {
        let x = self_normalize(obs).into_inner();
        let (p, n) = x.shape();
        let scale = p as f64 / n as f64;
        let mut matrix = match route {
            EigenRoute::Outer => &x * x.transpose(),
            EigenRoute::Gram => x.transpose() * &x,
        };
        matrix *= scale;
        SncMatrix { p, n, route, matrix }
    }

    pub fn route(&self) -> EigenRoute {
        self.route
    }

    /// `(p, n)` of the source panel.
    pub fn shape(&self) -> (usize, usize) {
        (self.p, self.n)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `Σ λᵢ²` without an eigendecomposition: the squared Frobenius norm.
    pub fn sum_squares(&self) -> f64 {
        self.matrix.norm_squared()
    }

    /// `Σ log λᵢ` through a Cholesky factorization of the `p × p` matrix.
    ///
    /// Returns `None` when the route is not `Outer` or when the matrix is
    /// not comfortably positive definite; callers then fall back to the
    /// eigenvalues, which report the precise failure.
    pub fn log_det(&self) -> Option<f64> {
        if self.route != EigenRoute::Outer {
            return None;
        }
        let max_diag = self.matrix.diagonal().max();
        let chol = self.matrix.clone().cholesky()?;
        let l = chol.l_dirty();
        let mut acc = 0.0;
        for i in 0..self.p {
            let d = l[(i, i)];
            // a pivot this small hints at an eigenvalue near the floor
            if !(d * d > EIGEN_FLOOR_REL * max_diag) {
                return None;
            }
            acc += d.ln();
        }
        Some(2.0 * acc)
    }

    pub fn summary(self) -> Result<SpectralSummary> {
        let (p, n) = (self.p, self.n);
        let computed = self.matrix.symmetric_eigenvalues();
        if computed.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("eigensolver returned non-finite values"));
        }
        let mut eigenvalues: Vec<f64> = computed.iter().map(|&v| v.max(0.0)).collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        eigenvalues.resize(p, 0.0);
        Ok(SpectralSummary {
            p,
            n,
            y_n: p as f64 / n as f64,
            eigenvalues,
        })
    }
}

/// Eigenvalues of `S̃ₙ`, nonincreasing, with `(p, n, yₙ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub p: usize,
    pub n: usize,
    pub y_n: f64,
    pub eigenvalues: Vec<f64>,
}

impl SpectralSummary {
    pub fn eigen_floor(&self) -> f64 {
        EIGEN_FLOOR_REL * self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn power_sum(&self, k: u32) -> f64 {
        self.eigenvalues.iter().map(|l| l.powi(k as i32)).sum()
    }

    pub fn log_sum(&self) -> Result<f64> {
        let floor = self.eigen_floor();
        match self.eigenvalues.iter().rposition(|&l| l <= floor) {
            Some(idx) => Err(Error::DegenerateSpectrum(format!(
                "eigenvalue {} of {} is {:e}, at or below the floor {:e}",
                idx + 1,
                self.p,
                self.eigenvalues[idx],
                floor
            ))),
            None => Ok(self.eigenvalues.iter().map(|l| l.ln()).sum()),
        }
    }
}

pub fn snc_eigenvalues(obs: &ObservationMatrix) -> Result<SpectralSummary> {
    SncMatrix::build(obs).summary()
}

/// Test function `f` of a linear spectral statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralFunction {
    Log,
    Power(u32),
}

impl SpectralFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SpectralFunction::Log => x.ln(),
            SpectralFunction::Power(k) => x.powi(k as i32),
        }
    }

    pub fn eval_complex(&self, z: num_complex::Complex64) -> num_complex::Complex64 {
        match *self {
            SpectralFunction::Log => z.ln(),
            SpectralFunction::Power(k) => z.powu(k),
        }
    }
}

impl std::fmt::Display for SpectralFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpectralFunction::Log => write!(f, "log"),
            SpectralFunction::Power(k) => write!(f, "power:{k}"),
        }
    }
}

impl std::str::FromStr for SpectralFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("log") {
            return Ok(SpectralFunction::Log);
        }
        let k = s
            .strip_prefix("power:")
            .and_then(|k| k.parse::<u32>().ok())
            .ok_or_else(|| Error::config(format!("unknown spectral function '{s}' (expected log or power:k)")))?;
        Ok(SpectralFunction::Power(k))
    }
}

/// `∫ log x dF_y(x) = (y - 1)/y · log(1 - y) - 1`, defined for `y < 1`.
pub fn mp_log_integral(y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::UnsupportedRegime(format!(
            "the log statistic needs y_n in (0, 1), got {y}"
        )));
    }
    Ok((y - 1.0) / y * (-y).ln_1p() - 1.0)
}

/// Centered, p-scaled statistic `G(f) = Σ f(λᵢ) - p ∫ f dF_{yₙ}`.
pub fn lss_g(summary: &SpectralSummary, f: SpectralFunction) -> Result<f64> {
    let p = summary.p as f64;
    match f {
        SpectralFunction::Log => {
            let center = mp_log_integral(summary.y_n)?;
            Ok(summary.log_sum()? - p * center)
        }
        SpectralFunction::Power(k) => {
            if k == 0 || k > MAX_MOMENT_ORDER {
                return Err(Error::domain(format!("power {k} outside 1..={MAX_MOMENT_ORDER}")));
            }
            Ok(summary.power_sum(k) - p * mp_moment(k, summary.y_n)?)
        }
    }
}

/// Kolmogorov–Smirnov distance between the ESD and `F_{yₙ}`.
pub fn esd_ks_distance(summary: &SpectralSummary) -> f64 {
    let law = match MpLaw::new(summary.y_n) {
        Ok(law) => law,
        Err(_) => return f64::NAN,
    };
    let p = summary.eigenvalues.len() as f64;
    let mut sorted = summary.eigenvalues.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));

    // The law may jump at 0 even when the ESD does not.
    let below_zero = sorted.iter().take_while(|&&l| l < 0.0).count() as f64 / p;
    let at_zero = sorted.iter().take_while(|&&l| l <= 0.0).count() as f64 / p;
    let mut dist = (at_zero - law.cdf(0.0)).abs().max(below_zero);

    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        let before = i as f64 / p;
        let after = j as f64 / p;
        let f_at = law.cdf(v);
        // F is continuous away from 0, so F(v⁻) = F(v) there.
        let f_left = if v == 0.0 { 0.0 } else { f_at };
        dist = dist.max((before - f_left).abs()).max((after - f_at).abs());
        i = j;
    }
    dist
}

/// Squared norm of a column, summed in index order.
pub fn column_norm_sq(col: &DVector<f64>) -> f64 {
    col.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn normalize_columns() {
        let mut data = DMatrix::zeros(4, 3);
        data[(0, 0)] = 3.0;
        data[(1, 0)] = 4.0;
        data[(2, 2)] = 1.0;
        let obs = ObservationMatrix::new(data).unwrap();
        let x = self_normalize(&obs);
        assert_abs_diff_eq!(x.data()[(0, 0)], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(x.data()[(1, 0)], 0.8, epsilon = 1e-15);
        assert!(x.data().column(1).iter().all(|&v| v == 0.0));
        assert_eq!(x.data().column(2), obs.data().column(2));
    }

    #[test]
    fn rejects_bad_panels() {
        assert!(ObservationMatrix::new(DMatrix::zeros(1, 5)).is_err());
        let mut d = DMatrix::zeros(3, 3);
        d[(1, 2)] = f64::INFINITY;
        assert!(ObservationMatrix::new(d).is_err());
    }

    #[test]
    fn identity_spectrum() {
        let obs = ObservationMatrix::new(DMatrix::identity(5, 5) * 2.5).unwrap();
        let s = snc_eigenvalues(&obs).unwrap();
        for l in &s.eigenvalues {
            assert_abs_diff_eq!(*l, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn two_by_two_spectrum() {
        let h = 0.5f64.sqrt();
        let obs = ObservationMatrix::new(dmatrix![1.0, h; 0.0, h]).unwrap();
        let s = snc_eigenvalues(&obs).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], 1.0 + h, epsilon = 1e-14);
        assert_abs_diff_eq!(s.eigenvalues[1], 1.0 - h, epsilon = 1e-14);
    }

    #[test]
    fn gram_route_pads_zeros() {
        let obs = ObservationMatrix::new(DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5)).unwrap();
        let s = snc_eigenvalues(&obs).unwrap();
        assert_eq!(s.eigenvalues.len(), 6);
        assert!(s.eigenvalues[3..].iter().all(|&l| l == 0.0));
        assert_abs_diff_eq!(s.eigenvalues.iter().sum::<f64>(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn lss_examples() {
        let s = SpectralSummary {
            p: 4,
            n: 8,
            y_n: 0.5,
            eigenvalues: vec![1.0; 4],
        };
        assert_abs_diff_eq!(lss_g(&s, SpectralFunction::Power(1)).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(lss_g(&s, SpectralFunction::Power(2)).unwrap(), 4.0 - 4.0 * 1.5, epsilon = 1e-14);
        let expected = 4.0 * (1.0 + 0.5f64.ln());
        assert_abs_diff_eq!(lss_g(&s, SpectralFunction::Log).unwrap(), expected, epsilon = 1e-13);
        let degenerate = SpectralSummary {
            eigenvalues: vec![2.0, 1.0, 1.0, 0.0],
            ..s.clone()
        };
        assert!(matches!(
            lss_g(&degenerate, SpectralFunction::Log),
            Err(Error::DegenerateSpectrum(_))
        ));
        let wide = SpectralSummary { y_n: 1.5, ..s };
        assert!(matches!(lss_g(&wide, SpectralFunction::Log), Err(Error::UnsupportedRegime(_))));
    }

    #[test]
    fn parse_spectral_function() {
        assert_eq!("log".parse::<SpectralFunction>().unwrap(), SpectralFunction::Log);
        assert_eq!("power:3".parse::<SpectralFunction>().unwrap(), SpectralFunction::Power(3));
        assert!("power:x".parse::<SpectralFunction>().is_err());
    }

    #[test]
    fn ks_on_quantiles_and_constant_spectrum() {
        let y: f64 = 0.5;
        let law = MpLaw::new(y).unwrap();
        let p = 200;
        // MP quantiles by bisection on the closed-form CDF
        let eig: Vec<f64> = (0..p)
            .map(|i| {
                let target = (i as f64 + 0.5) / p as f64;
                let (mut lo, mut hi) = (law.a_minus, law.a_plus);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if law.cdf(mid) < target {
                        lo = mid
                    } else {
                        hi = mid
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        let s = SpectralSummary { p, n: 400, y_n: y, eigenvalues: eig };
        assert!(esd_ks_distance(&s) <= 1.0 / p as f64);

        let s = SpectralSummary { p: 10, n: 20, y_n: y, eigenvalues: vec![1.0; 10] };
        let f1 = law.cdf(1.0);
        assert_abs_diff_eq!(esd_ks_distance(&s), f1.max(1.0 - f1), epsilon = 1e-14);
    }

    #[test]
    fn fast_paths_match_eigenvalues() {
        let obs = ObservationMatrix::new(DMatrix::from_fn(5, 9, |i, j| ((i * 13 + j * 7) % 11) as f64 - 4.7)).unwrap();
        let m = SncMatrix::build(&obs);
        let s = m.clone().summary().unwrap();
        assert_abs_diff_eq!(m.sum_squares(), s.power_sum(2), epsilon = 1e-11);
        assert_abs_diff_eq!(m.log_det().unwrap(), s.log_sum().unwrap(), epsilon = 1e-10);
    }
}
