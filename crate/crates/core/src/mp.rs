//! The standard Marčenko–Pastur law `F_y` and its companion `F̲_y`.
//!
//! `F_y` has density
//!
//! ```text
//! p_y(x) = sqrt((x - a₋)(a₊ - x)) / (2π x y),   a± = (1 ± √y)²,
//! ```
//!
//! on `[a₋, a₊]` and an atom of mass `1 - 1/y` at the origin when `y > 1`.
//! The companion law `F̲_y = (1 - y)·δ₀ + y·F_y` is the limit spectrum of the
//! `n × n` Gram matrix; its Stieltjes transform `m̲(z)` solves
//!
//! ```text
//! z = -1/m̲ + y/(1 + m̲)     ⇔     z m̲² + (z + 1 - y) m̲ + 1 = 0.
//! ```
//!
//! Integrals against `F_y` are computed after the substitution
//! `x = 1 + y - 2√y cos θ`, under which `p_y(x) dx = 2 sin²θ / (π x) dθ`.
//! The transformed integrand is an even, 2π-periodic function of θ, so the
//! midpoint rule on `[0, π]` converges geometrically and is exact for
//! polynomial `f` once the node count exceeds the degree.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex argument / value of the Stieltjes transform.
pub type ComplexPoint = Complex64;

/// Largest moment order accepted by [`mp_moment`] and the moment tests.
pub const MAX_MOMENT_ORDER: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpLaw {
    pub y: f64,
    pub a_minus: f64,
    pub a_plus: f64,
    pub point_mass_at_zero: f64,
}

impl MpLaw {
    pub fn new(y: f64) -> Result<Self> {
        let (a_minus, a_plus) = support_edges(y)?;
        Ok(MpLaw {
            y,
            a_minus,
            a_plus,
            point_mass_at_zero: if y > 1.0 { 1.0 - 1.0 / y } else { 0.0 },
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        if x <= 0.0 || x < self.a_minus || x > self.a_plus {
            return 0.0;
        }
        let prod = (x - self.a_minus) * (self.a_plus - x);
        prod.max(0.0).sqrt() / (2.0 * PI * x * self.y)
    }

    /// Distribution function, atom included. Closed form of the
    /// θ-substituted density integral.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x <= self.a_minus {
            return self.point_mass_at_zero;
        }
        if x >= self.a_plus {
            return 1.0;
        }
        let y = self.y;
        let sy = y.sqrt();
        let cos_t = ((1.0 + y - x) / (2.0 * sy)).clamp(-1.0, 1.0);
        let theta = cos_t.acos();
        let gap = (1.0 - y).abs();
        let arctan_term = if gap == 0.0 {
            // y = 1: the arctan term tends to (π/2)·0 continuously.
            0.0
        } else {
            gap / (2.0 * y) * ((1.0 + sy) / (1.0 - sy).abs() * (theta / 2.0).tan()).atan()
        };
        let cont = 2.0 / PI * (theta.sin() / (2.0 * sy) + (1.0 + y) * theta / (4.0 * y) - arctan_term);
        (self.point_mass_at_zero + cont).clamp(0.0, 1.0)
    }

    pub fn moment(&self, k: u32) -> Result<f64> {
        mp_moment(k, self.y)
    }

    pub fn stieltjes_m_underline(&self, z: ComplexPoint) -> Result<ComplexPoint> {
        stieltjes_m_underline(z, self.y)
    }
}

fn check_ratio(y: f64) -> Result<()> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::domain(format!("aspect ratio must be positive and finite, got {y}")));
    }
    Ok(())
}

pub fn support_edges(y: f64) -> Result<(f64, f64)> {
    check_ratio(y)?;
    let s = y.sqrt();
    Ok(((1.0 - s).powi(2), (1.0 + s).powi(2)))
}

/// Continuous part of the density; the atom at zero is not included.
/// Returns 0 for invalid `y`.
pub fn density(x: f64, y: f64) -> f64 {
    MpLaw::new(y).map(|law| law.density(x)).unwrap_or(0.0)
}

fn nonpositive_integer(v: f64) -> Option<u64> {
    if v <= 0.0 && (v - v.round()).abs() < 1e-12 {
        Some((-v.round()) as u64)
    } else {
        None
    }
}

/// Gauss hypergeometric `₂F₁(a, b; c; x)` for terminating parameters only.
pub fn hyp2f1_terminating(a: f64, b: f64, c: f64, x: f64) -> Result<f64> {
    let len = match (nonpositive_integer(a), nonpositive_integer(b)) {
        (Some(m), Some(n)) => m.min(n),
        (Some(m), None) | (None, Some(m)) => m,
        (None, None) => {
            return Err(Error::Unsupported(format!(
                "2F1({a}, {b}; {c}; x) does not terminate"
            )))
        }
    };
    if let Some(cc) = nonpositive_integer(c) {
        if cc < len {
            return Err(Error::Unsupported(format!(
                "2F1 lower parameter c = {c} hits zero before the series terminates"
            )));
        }
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 0..len {
        let m = m as f64;
        term *= (a + m) * (b + m) / ((c + m) * (m + 1.0)) * x;
        sum += term;
    }
    Ok(sum)
}

/// `∫ x^k dF_y(x)` via the terminating hypergeometric representation.
pub fn mp_moment(k: u32, y: f64) -> Result<f64> {
    check_ratio(y)?;
    if k > MAX_MOMENT_ORDER {
        return Err(Error::domain(format!(
            "moment order {k} exceeds the supported maximum {MAX_MOMENT_ORDER}"
        )));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let kf = k as f64;
    let arg = 4.0 * y / (1.0 + y).powi(2);
    let h = hyp2f1_terminating((1.0 - kf) / 2.0, 1.0 - kf / 2.0, 2.0, arg)?;
    Ok((1.0 + y).powi(k as i32 - 1) * h)
}

/// Stieltjes transform of the companion law `F̲_y`.
///
/// The root of `z m² + (z + 1 - y) m + 1 = 0` with `Im m · Im z > 0` is
/// returned; on the real axis the value is the limit from the upper
/// half-plane.
pub fn stieltjes_m_underline(z: ComplexPoint, y: f64) -> Result<ComplexPoint> {
    let (a_minus, a_plus) = support_edges(y)?;
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::domain(format!("non-finite argument {z}")));
    }
    let scale = 1.0 + z.norm();
    let near_real = z.im.abs() <= 1e-10 * scale;
    if near_real {
        let x = z.re;
        if x >= a_minus && x <= a_plus {
            return Err(Error::domain(format!(
                "z = {x} lies inside the support [{a_minus}, {a_plus}]"
            )));
        }
        if x == 0.0 {
            if y < 1.0 {
                return Err(Error::domain("z = 0 is the atom of the companion law"));
            }
            // z m² vanishes: (1 - y) m + 1 = 0.
            return Ok(Complex64::new(1.0 / (y - 1.0), 0.0));
        }
        let (r1, r2) = quadratic_roots(Complex64::new(x, 0.0), y);
        let probe = Complex64::new(x, 1e-6 * scale);
        let (p1, p2) = quadratic_roots(probe, y);
        let guide = herglotz_root(p1, p2, probe);
        let pick = if (r1 - guide).norm() <= (r2 - guide).norm() { r1 } else { r2 };
        return Ok(Complex64::new(pick.re, 0.0));
    }
    let (r1, r2) = quadratic_roots(z, y);
    Ok(herglotz_root(r1, r2, z))
}

fn herglotz_root(r1: Complex64, r2: Complex64, z: Complex64) -> Complex64 {
    if r1.im * z.im >= r2.im * z.im {
        r1
    } else {
        r2
    }
}

fn quadratic_roots(z: Complex64, y: f64) -> (Complex64, Complex64) {
    let b = z + (1.0 - y);
    let disc = b * b - 4.0 * z;
    let mut s = disc.sqrt();
    if (b.conj() * s).re < 0.0 {
        s = -s;
    }
    // q = -(b + s)/2 avoids cancellation; roots are q/z and 1/q.
    let q = -(b + s) * 0.5;
    (q / z, Complex64::new(1.0, 0.0) / q)
}

/// `dm̲/dz` expressed through `m̲` itself, from the inverse map
/// `z(m) = -1/m + y/(1+m)`.
pub fn stieltjes_derivative(m: ComplexPoint, y: f64) -> ComplexPoint {
    let one = Complex64::new(1.0, 0.0);
    one / (one / (m * m) - y / ((one + m) * (one + m)))
}

/// Values that can be integrated by [`mp_quadrature`].
pub trait QuadratureValue: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadratureValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadratureValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

const QUAD_MIN_NODES: usize = 32;
const QUAD_MAX_NODES: usize = 1 << 22;

/// `∫ f dF_y`, atom included, by the θ-substituted midpoint rule with
/// node doubling until two successive estimates agree.
pub fn mp_quadrature<T, F>(f: F, y: f64) -> Result<T>
where
    T: QuadratureValue,
    F: Fn(f64) -> T,
{
    let law = MpLaw::new(y)?;
    let sy = y.sqrt();
    let continuous = |nodes: usize| -> Result<T> {
        let h = PI / nodes as f64;
        let mut acc = T::zero();
        for j in 0..nodes {
            let theta = (j as f64 + 0.5) * h;
            let x = 1.0 + y - 2.0 * sy * theta.cos();
            let s = theta.sin();
            // sin²θ / x stays bounded as y → 1 and θ → 0.
            let w = if x > 0.0 { 2.0 * s * s / (PI * x) } else { (1.0 + theta.cos()) / PI };
            let v = f(x);
            if !v.magnitude().is_finite() {
                return Err(Error::numerical(format!("integrand is not finite at x = {x}")));
            }
            acc = acc + v * (w * h);
        }
        Ok(acc)
    };
    let atom = if law.point_mass_at_zero > 0.0 {
        let v = f(0.0);
        if !v.magnitude().is_finite() {
            return Err(Error::numerical("integrand is not finite at the atom x = 0"));
        }
        v * law.point_mass_at_zero
    } else {
        T::zero()
    };

    let mut nodes = QUAD_MIN_NODES;
    let mut prev = continuous(nodes)?;
    while nodes < QUAD_MAX_NODES {
        nodes *= 2;
        let next = continuous(nodes)?;
        let diff = (next + prev * -1.0).magnitude();
        if diff <= 1e-13 * next.magnitude().max(1.0) {
            return Ok(next + atom);
        }
        prev = next;
    }
    Err(Error::numerical(format!(
        "quadrature did not converge with {QUAD_MAX_NODES} nodes"
    )))
}
