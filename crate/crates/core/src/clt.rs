//! Centering and scaling for the self-normalized LSS central limit theorem.
//!
//! Closed forms cover `f = log` and `f = x^k`. The contour-integral forms
//! of the limiting mean and covariance are evaluated numerically as an
//! independent check of those closed forms:
//!
//! ```text
//! E G(f) = 1/(πi) ∮ f A (1 - B)⁻¹ dz - 1/(2πi) ∮ f A (1 - B)⁻² dz,
//!     A = y m̲³/(1 + m̲)³,   B = y m̲²/(1 + m̲)²,
//!
//! Cov(G(f), G(g)) = y/(2π²) ∮∮ f(z₁) g(z₂) m̲'(z₁) m̲'(z₂) / ((1 + m̲₁)² (1 + m̲₂)²) dz₁ dz₂
//!                 - 1/(2π²) ∮∮ f(z₁) g(z₂) m̲'(z₁) m̲'(z₂) / (m̲₂ - m̲₁)² dz₁ dz₂.
//! ```
//!
//! Contours are counterclockwise circles; the trapezoidal rule on a circle
//! converges geometrically for these analytic periodic integrands. The
//! first covariance integral factorizes into two single integrals.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp::{stieltjes_derivative, stieltjes_m_underline, support_edges, MAX_MOMENT_ORDER};
use crate::spectra::{SpectralFunction, SpectralSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterScale {
    pub center: f64,
    pub sd: f64,
}

impl CenterScale {
    pub fn standardize(&self, statistic: f64) -> f64 {
        (statistic - self.center) / self.sd
    }
}

/// Limiting `(mean, variance)` of `G(log)` at `y ∈ (0, 1)`.
pub fn log_limit_moments(y: f64) -> Result<(f64, f64)> {
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::UnsupportedRegime(format!("the log functional needs y in (0, 1), got {y}")));
    }
    let l1y = (-y).ln_1p();
    Ok((y + l1y / 2.0, -2.0 * y - 2.0 * l1y))
}

/// Centering and scale for `L̃ₙ = Σ log λᵢ` at `yₙ = p/n ∈ (0, 1)`.
pub fn log_center_scale(p: usize, n: usize) -> Result<CenterScale> {
    if p == 0 || n == 0 {
        return Err(Error::domain("p and n must be positive"));
    }
    let y = p as f64 / n as f64;
    if y >= 1.0 {
        return Err(Error::UnsupportedRegime(format!(
            "the log statistic needs p < n, got p = {p}, n = {n}"
        )));
    }
    let (mean, var) = log_limit_moments(y)?;
    let center = p as f64 * ((y - 1.0) / y * (-y).ln_1p() - 1.0) + mean;
    Ok(CenterScale {
        center,
        sd: var.sqrt(),
    })
}

/// `(T̃ₙ + 1)/2` from `Σ λᵢ²`, with `T̃ₙ = Σ λᵢ² / yₙ - n - p`.
pub fn jhn_from_sum_squares(sum_squares: f64, p: usize, n: usize) -> f64 {
    let y = p as f64 / n as f64;
    let t = sum_squares / y - n as f64 - p as f64;
    (t + 1.0) / 2.0
}

pub fn jhn_standardize(summary: &SpectralSummary) -> f64 {
    jhn_from_sum_squares(summary.power_sum(2), summary.p, summary.n)
}

fn binom(n: i64, r: i64) -> f64 {
    if r < 0 || n < 0 || r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_order(k: u32, y: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::domain(format!("moment order must be at least 2, got {k}")));
    }
    if k > MAX_MOMENT_ORDER {
        return Err(Error::domain(format!("moment order {k} exceeds {MAX_MOMENT_ORDER}")));
    }
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::domain(format!("aspect ratio must be positive, got {y}")));
    }
    Ok(())
}

/// Asymptotic mean `μ_{n,x^k}` of `G(x^k)` at ratio `yₙ`.
pub fn moment_mu(k: u32, y: f64) -> Result<f64> {
    check_order(k, y)?;
    let kf = k as f64;
    let arg = 4.0 * y / (1.0 + y).powi(2);
    let h1 = crate::mp::hyp2f1_terminating((3.0 - kf) / 2.0, 1.0 - kf / 2.0, 1.0, arg)?;
    let h2 = crate::mp::hyp2f1_terminating((3.0 - kf) / 2.0, 1.0 - kf / 2.0, 2.0, arg)?;
    let lead = -2.0 * kf * (kf - 1.0) * (1.0 + y).powi(k as i32 - 2) / ((kf + 1.0) * (kf + 2.0));
    let block = lead * ((y - 1.0).powi(2) * h1 + (-1.0 + 4.0 * kf * y - y * y) * h2);
    let sy = y.sqrt();
    let edges = 0.25 * ((1.0 + sy).powi(2 * k as i32) + (1.0 - sy).powi(2 * k as i32));
    let squares: f64 = (0..=k as i64).map(|i| binom(k as i64, i).powi(2) * y.powi(i as i32)).sum();
    Ok(block + edges - 0.5 * squares)
}

/// Asymptotic variance `σ²_{n,x^k}` of `G(x^k)` at ratio `yₙ`.
///
/// Powers of `(1 - y)/y` are merged with their prefactors so that `y = 1`
/// is evaluated without dividing by zero. The `i = 0` term of the first sum
/// carries `1/(-1)! = 0` and is dropped.
pub fn moment_sigma2(k: u32, y: f64) -> Result<f64> {
    check_order(k, y)?;
    let k_i = k as i64;
    let one_minus = 1.0 - y;

    let mut inner = 0.0;
    for i in 1..=k_i + 1 {
        // (k+i-1)! / ((i-1)! (k+1)!) = C(k+i-1, k) / (k+1)
        let ratio = binom(k_i + i - 1, k_i) / (k_i + 1) as f64;
        let pow = one_minus.powi((k_i + 1 - i) as i32) * y.powi((i - 1) as i32);
        inner += binom(k_i + 1, i) * pow * ratio;
    }
    let first = -2.0 * y * (k as f64 * inner).powi(2);

    let mut second = 0.0;
    for i in 0..k_i {
        for j in 0..=k_i {
            let weight = binom(k_i, i) * binom(k_i, j) * y.powi((2 * k_i - i - j) as i32) * one_minus.powi((i + j) as i32);
            let mut ell_sum = 0.0;
            for ell in 1..=(k_i - i) {
                ell_sum += ell as f64 * binom(2 * k_i - 1 - (i + ell), k_i - 1) * binom(2 * k_i - 1 - j + ell, k_i - 1);
            }
            second += weight * ell_sum;
        }
    }
    let sigma2 = first + 2.0 * second;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::numerical(format!(
            "variance for k = {k}, y = {y} evaluated to {sigma2}; expected a positive value"
        )));
    }
    Ok(sigma2)
}

pub fn moment_center_scale(k: u32, y: f64) -> Result<CenterScale> {
    Ok(CenterScale {
        center: moment_mu(k, y)?,
        sd: moment_sigma2(k, y)?.sqrt(),
    })
}

/// Circle `|z - center_re| = radius` sampled at `nodes` equispaced points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub center_re: f64,
    pub radius: f64,
    pub nodes: usize,
}

pub const DEFAULT_NODES: usize = 2048;
const POWER_CLEARANCE: f64 = 0.5;

impl ContourSpec {
    /// Interval the contour must enclose: `[a₋·1{y<1}, a₊]`.
    fn enclosed_interval(y: f64) -> Result<(f64, f64)> {
        let (a_minus, a_plus) = support_edges(y)?;
        Ok((if y < 1.0 { a_minus } else { 0.0 }, a_plus))
    }

    /// A pair of nested, non-intersecting contours suited to `f` at ratio `y`.
    ///
    /// For powers: concentric circles about `(a₋ + a₊)/2` with radii `r`
    /// and `1.3r`. For `log` (only `y < 1`) both circles must pass between
    /// 0 and `a₋`; they cross the real axis at `2a₋/3` and `a₋/3`, and the
    /// node count grows with the inverse of that gap.
    pub fn default_pair(f: SpectralFunction, y: f64) -> Result<(ContourSpec, ContourSpec)> {
        let (lo, hi) = Self::enclosed_interval(y)?;
        let (a_minus, a_plus) = support_edges(y)?;
        match f {
            SpectralFunction::Power(_) => {
                let center = 0.5 * (a_minus + a_plus);
                let r = (center - lo).max(hi - center) + POWER_CLEARANCE;
                Ok((
                    ContourSpec { center_re: center, radius: r, nodes: DEFAULT_NODES },
                    ContourSpec { center_re: center, radius: 1.3 * r, nodes: DEFAULT_NODES },
                ))
            }
            SpectralFunction::Log => {
                if y >= 1.0 {
                    return Err(Error::UnsupportedRegime(format!(
                        "log contour needs y in (0, 1), got {y}"
                    )));
                }
                let through = |left: f64, right: f64| (0.5 * (left + right), 0.5 * (right - left));
                let (c1, r1) = through(2.0 * a_minus / 3.0, a_plus + 0.5);
                let (c2, r2) = through(a_minus / 3.0, a_plus + 1.0);
                let gap = a_minus / 3.0;
                let needed = (40.0 * r2 / gap).ceil() as usize;
                let nodes = needed.next_power_of_two().max(DEFAULT_NODES);
                Ok((
                    ContourSpec { center_re: c1, radius: r1, nodes },
                    ContourSpec { center_re: c2, radius: r2, nodes },
                ))
            }
        }
    }

    fn validate(&self, f: SpectralFunction, y: f64) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite() && self.center_re.is_finite()) || self.nodes < 8 {
            return Err(Error::domain(format!("invalid contour {self:?}")));
        }
        let (lo, hi) = Self::enclosed_interval(y)?;
        let left = self.center_re - self.radius;
        let right = self.center_re + self.radius;
        if !(left < lo && right > hi) {
            return Err(Error::domain(format!(
                "contour [{left}, {right}] on the real axis does not strictly enclose [{lo}, {hi}]"
            )));
        }
        if f == SpectralFunction::Log {
            if y >= 1.0 {
                return Err(Error::UnsupportedRegime(format!("log functional needs y < 1, got {y}")));
            }
            if left <= 0.0 {
                return Err(Error::domain("contour for log must keep the origin outside"));
            }
        }
        Ok(())
    }

    fn points(&self) -> impl Iterator<Item = (Complex64, Complex64)> + '_ {
        let h = 2.0 * PI / self.nodes as f64;
        (0..self.nodes).map(move |j| {
            let e = Complex64::from_polar(1.0, j as f64 * h);
            let z = self.center_re + self.radius * e;
            // dz = i r e^{iθ} dθ
            let dz = Complex64::new(0.0, self.radius * h) * e;
            (z, dz)
        })
    }
}

fn check_nested(a: &ContourSpec, b: &ContourSpec) -> Result<()> {
    let (inner, outer) = if a.radius <= b.radius { (a, b) } else { (b, a) };
    if (inner.center_re - outer.center_re).abs() + inner.radius >= outer.radius {
        return Err(Error::domain(format!("contours {a:?} and {b:?} intersect or coincide")));
    }
    Ok(())
}

/// Neumaier-compensated complex sum in index order.
#[derive(Default)]
struct CompensatedSum {
    sum: Complex64,
    comp: Complex64,
}

impl CompensatedSum {
    fn add(&mut self, v: Complex64) {
        let (s_re, c_re) = two_sum(self.sum.re, v.re);
        let (s_im, c_im) = two_sum(self.sum.im, v.im);
        self.sum = Complex64::new(s_re, s_im);
        self.comp += Complex64::new(c_re, c_im);
    }

    fn value(&self) -> Complex64 {
        self.sum + self.comp
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let c = if a.abs() >= b.abs() { (a - s) + b } else { (b - s) + a };
    (s, c)
}

const IMAG_TOLERANCE: f64 = 1e-8;

fn real_part(v: Complex64, what: &str) -> Result<f64> {
    if !(v.re.is_finite() && v.im.is_finite()) {
        return Err(Error::numerical(format!("{what}: non-finite contour integral")));
    }
    if v.im.abs() > IMAG_TOLERANCE * v.re.abs().max(1.0) {
        return Err(Error::numerical(format!(
            "{what}: imaginary residue {:e} exceeds tolerance; refine the contour",
            v.im
        )));
    }
    Ok(v.re)
}

/// Limiting mean `E G(f)` by trapezoidal quadrature on `spec`.
pub fn contour_mean(f: SpectralFunction, y: f64, spec: &ContourSpec) -> Result<f64> {
    spec.validate(f, y)?;
    let one = Complex64::new(1.0, 0.0);
    let mut first = CompensatedSum::default();
    let mut second = CompensatedSum::default();
    for (z, dz) in spec.points() {
        let m = stieltjes_m_underline(z, y)?;
        let r = m / (one + m);
        let a = y * r * r * r;
        let one_minus_b = one - y * r * r;
        let fz = f.eval_complex(z);
        first.add(fz * a / one_minus_b * dz);
        second.add(fz * a / (one_minus_b * one_minus_b) * dz);
    }
    let i = Complex64::new(0.0, 1.0);
    let total = first.value() / (PI * i) - second.value() / (2.0 * PI * i);
    real_part(total, "contour mean")
}

struct NodeValues {
    f: Vec<Complex64>,
    m: Vec<Complex64>,
    /// m̲'(z) dz
    dm: Vec<Complex64>,
}

fn node_values(f: SpectralFunction, y: f64, spec: &ContourSpec) -> Result<NodeValues> {
    let mut vals = NodeValues {
        f: Vec::with_capacity(spec.nodes),
        m: Vec::with_capacity(spec.nodes),
        dm: Vec::with_capacity(spec.nodes),
    };
    for (z, dz) in spec.points() {
        let m = stieltjes_m_underline(z, y)?;
        vals.f.push(f.eval_complex(z));
        vals.dm.push(stieltjes_derivative(m, y) * dz);
        vals.m.push(m);
    }
    Ok(vals)
}

/// Limiting covariance `Cov(G(f), G(g))` over two nested contours.
pub fn contour_cov(
    f: SpectralFunction,
    g: SpectralFunction,
    y: f64,
    spec1: &ContourSpec,
    spec2: &ContourSpec,
) -> Result<f64> {
    spec1.validate(f, y)?;
    spec2.validate(g, y)?;
    check_nested(spec1, spec2)?;
    let one = Complex64::new(1.0, 0.0);
    let v1 = node_values(f, y, spec1)?;
    let v2 = node_values(g, y, spec2)?;

    let separable = |v: &NodeValues| {
        let mut acc = CompensatedSum::default();
        for ((fz, m), dm) in v.f.iter().zip(&v.m).zip(&v.dm) {
            acc.add(fz * dm / ((one + m) * (one + m)));
        }
        acc.value()
    };
    let first = separable(&v1) * separable(&v2);

    // Each row is summed sequentially and rows are reduced in index order,
    // so the result does not depend on the thread count.
    let rows: Vec<Complex64> = (0..spec2.nodes)
        .into_par_iter()
        .map(|j| {
            let (m2, w2) = (v2.m[j], v2.f[j] * v2.dm[j]);
            let mut acc = CompensatedSum::default();
            for ((f1, m1), dm1) in v1.f.iter().zip(&v1.m).zip(&v1.dm) {
                let d = m2 - m1;
                acc.add(f1 * dm1 / (d * d));
            }
            acc.value() * w2
        })
        .collect();
    let mut second = CompensatedSum::default();
    for r in rows {
        second.add(r);
    }

    let total = first * (y / (2.0 * PI * PI)) - second.value() / (2.0 * PI * PI);
    real_part(total, "contour covariance")
}
