//! Exact spectrum of `C 𝒪ₙ C` for `d = 1`, `s = 1`, `𝒟 = d/dx` on
//! `Ω = [-L, L]` inside the periodic box `[-2L, 2L]`.
//!
//! An eigenfunction solves `λ(w − w″) − μ w″ = a⁻¹ w` on Ω and
//! `w − w″ = 0` outside, with continuity and the flux condition
//! `(λ+μ) w′(±L from inside) = λ w′(±L from outside)`. Inside it is
//! `cos(ξx)` or `sin(ξx)` with `a⁻¹ = λ + (λ+μ) ξ²`; outside it is
//! `cosh(x ∓ 2L)` or `sinh(x ∓ 2L)`. Matching gives one quantization
//! equation per parity:
//!
//! * even: `ξL tan(ξL) = L · λ/(λ+μ) · tanh L`, one root in each
//!   `[kπ/L, (k+½)π/L)`, `k ≥ 0`;
//! * odd: `tan(ξL)/(ξL) = −(1 + μ/λ) · tanh(L)/L`, one root in each
//!   `((k−½)π/L, kπ/L)`, `k ≥ 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::RegularizationParams;
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::spectrum::{sort_descending, Eigenfunctions, Provenance, Spectrum, SpectrumParams};

/// Relative distance kept from each pole of `tan` when bracketing.
fn pole_margin<T: Real>() -> T {
    lit::<T>(1e-9).max(T::eps() * lit(64.0))
}

/// Bisection for an increasing `f` with `f(lo) ≤ 0 ≤ f(hi)`, to absolute
/// tolerance `tol` (or until the bracket stops shrinking).
fn bisect<T: Real>(f: impl Fn(T) -> T, mut lo: T, mut hi: T, tol: T) -> T {
    if f(lo) >= T::zero() {
        return lo;
    }
    let half = lit::<T>(0.5);
    while hi - lo > tol {
        let mid = (lo + hi) * half;
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * half
}

fn check_inputs<T: Real>(half_width: T, count: usize) -> Result<()> {
    if !(half_width > T::zero()) || !half_width.is_finite() {
        return Err(Error::invalid("L", "half-width must be positive and finite"));
    }
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    Ok(())
}

fn root_tolerance<T: Real>(half_width: T) -> T {
    // 1e-12·π/L in ξ, i.e. 1e-12·π in t = ξL; relaxed to the scalar's
    // resolution in single precision.
    lit::<T>(1e-12) * T::PI() / half_width
}

/// The first `count` roots `ξ` of `ξL tan(ξL) = L·λ/(λ+μ)·tanh L`,
/// root `k` lying in `[kπ/L, (k+½)π/L)`.
pub fn quantization_roots_symmetric<T: Real>(
    reg: &RegularizationParams<T>,
    half_width: T,
    count: usize,
) -> Result<Vec<T>> {
    check_inputs(half_width, count)?;
    let l = half_width;
    let rhs = l * reg.lambda / (reg.lambda + reg.mu) * l.tanh();
    let pi = T::PI();
    let half_pi = pi * lit(0.5);
    let tol = root_tolerance(l) * l;
    Ok((0..count)
        .map(|k| {
            let lo = pi * from_usize::<T>(k);
            let hi = lo + half_pi * (T::one() - pole_margin::<T>());
            let t = bisect(|t: T| t * t.tan() - rhs, lo, hi, tol.max(T::eps() * hi * lit(4.0)));
            t / l
        })
        .collect())
}

/// The first `count` roots `ξ` of `tan(ξL)/(ξL) = −(1+μ/λ)·tanh(L)/L`,
/// root `k` (1-based) lying in `((k−½)π/L, kπ/L)`.
pub fn quantization_roots_antisymmetric<T: Real>(
    reg: &RegularizationParams<T>,
    half_width: T,
    count: usize,
) -> Result<Vec<T>> {
    check_inputs(half_width, count)?;
    let l = half_width;
    let rhs = -(T::one() + reg.mu / reg.lambda) * l.tanh() / l;
    let pi = T::PI();
    let half_pi = pi * lit(0.5);
    let tol = root_tolerance(l) * l;
    Ok((1..=count)
        .map(|k| {
            let hi = pi * from_usize::<T>(k);
            let lo = hi - half_pi * (T::one() - pole_margin::<T>());
            let t = bisect(|t: T| t.tan() / t - rhs, lo, hi, tol.max(T::eps() * hi * lit(4.0)));
            t / l
        })
        .collect())
}

/// `a = 1 / (λ + (λ+μ) ξ²)`.
pub fn eigenvalue_from_root<T: Real>(reg: &RegularizationParams<T>, xi: T) -> T {
    T::one() / (reg.lambda + (reg.lambda + reg.mu) * xi * xi)
}

/// Bracket `[4L²/((λ+μ)(m+4)²π²), 4L²/((λ+μ)(m−2)²π²)]` on the 1-based
/// `m`-th eigenvalue, valid for `m ≥ 3`.
pub fn eigenvalue_bracket<T: Real>(reg: &RegularizationParams<T>, half_width: T, m: usize) -> Option<(T, T)> {
    if m < 3 {
        return None;
    }
    let num = lit::<T>(4.0) * half_width * half_width / (reg.lambda + reg.mu);
    let pi2 = T::PI() * T::PI();
    let lo = num / (from_usize::<T>(m + 4).powi(2) * pi2);
    let hi = num / (from_usize::<T>(m - 2).powi(2) * pi2);
    Some((lo, hi))
}

/// The `count` largest eigenvalues of `C 𝒪ₙ C`, with provenance and
/// eigenfunctions, after checking every `m ≥ 3` against its bracket.
pub fn exact_spectrum_1d<T: Real>(reg: &RegularizationParams<T>, half_width: T, count: usize) -> Result<Spectrum<T>> {
    if count < 6 {
        return Err(Error::invalid("count", "must be at least 6"));
    }
    // count roots of each parity cover the count smallest ξ overall, since
    // the two families interlace.
    let sym = quantization_roots_symmetric(reg, half_width, count)?;
    let anti = quantization_roots_antisymmetric(reg, half_width, count)?;
    let mut items: Vec<(T, (Provenance, Parity, T))> = sym
        .iter()
        .enumerate()
        .map(|(k, &xi)| (eigenvalue_from_root(reg, xi), (Provenance::Symmetric(k), Parity::Even, xi)))
        .chain(anti.iter().enumerate().map(|(i, &xi)| {
            (
                eigenvalue_from_root(reg, xi),
                (Provenance::Antisymmetric(i + 1), Parity::Odd, xi),
            )
        }))
        .collect();
    sort_descending(&mut items);
    items.truncate(count);

    for (i, (a, _)) in items.iter().enumerate() {
        let m = i + 1;
        if let Some((lo, hi)) = eigenvalue_bracket(reg, half_width, m) {
            if *a < lo || *a > hi {
                return Err(Error::BracketViolation {
                    m,
                    value: to_f64(*a),
                    lower: to_f64(lo),
                    upper: to_f64(hi),
                });
            }
        }
    }

    let eigenfunctions = items
        .iter()
        .map(|(_, (_, parity, xi))| PiecewiseEigenfunction::new(*parity, *xi, half_width))
        .collect();
    Ok(Spectrum {
        values: items.iter().map(|p| p.0).collect(),
        provenance: items.iter().map(|p| (p.1).0).collect(),
        params: Some(SpectrumParams {
            lambda: reg.lambda,
            mu: reg.mu,
            half_width,
            order: 1,
            dim: 1,
        }),
        eigenfunctions: Some(Eigenfunctions::Piecewise(eigenfunctions)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

/// `C cos(ξx)` / `D sin(ξx)` on `[-L, L]`, glued continuously to
/// `A cosh(x ∓ 2L)` / `B sinh(x ∓ 2L)` on the rest of `[-2L, 2L]`.
/// Normalized to unit `L²(Ω)` norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseEigenfunction<T> {
    pub parity: Parity,
    pub xi: T,
    pub half_width: T,
    pub inner: T,
    pub outer: T,
}

impl<T: Real> PiecewiseEigenfunction<T> {
    /// Builds the eigenfunction for root `ξ`; the outer coefficient comes
    /// from continuity at `±L`, so the flux condition holds only when `ξ` is
    /// a root of the matching quantization equation.
    pub fn new(parity: Parity, xi: T, half_width: T) -> Self {
        let l = half_width;
        let two = lit::<T>(2.0);
        let norm_sqr = match parity {
            Parity::Even if xi == T::zero() => two * l,
            Parity::Even => l + (two * xi * l).sin() / (two * xi),
            Parity::Odd => l - (two * xi * l).sin() / (two * xi),
        };
        let inner = T::one() / norm_sqr.sqrt();
        let outer = match parity {
            Parity::Even => inner * (xi * l).cos() / l.cosh(),
            Parity::Odd => -inner * (xi * l).sin() / l.sinh(),
        };
        Self {
            parity,
            xi,
            half_width,
            inner,
            outer,
        }
    }

    /// Value and derivative of the inside branch at `x`.
    fn inside(&self, x: T) -> (T, T) {
        let (s, c) = (self.xi * x).sin_cos();
        match self.parity {
            Parity::Even => (self.inner * c, -self.inner * self.xi * s),
            Parity::Odd => (self.inner * s, self.inner * self.xi * c),
        }
    }

    /// Value and derivative of the outside branch at `x` (`x > 0` uses the
    /// right piece, `x < 0` the left one).
    fn outside(&self, x: T) -> (T, T) {
        let two_l = self.half_width + self.half_width;
        let shifted = if x > T::zero() { x - two_l } else { x + two_l };
        match self.parity {
            Parity::Even => (self.outer * shifted.cosh(), self.outer * shifted.sinh()),
            Parity::Odd => (self.outer * shifted.sinh(), self.outer * shifted.cosh()),
        }
    }

    pub fn eval(&self, x: T) -> T {
        if x.abs() <= self.half_width {
            self.inside(x).0
        } else {
            self.outside(x).0
        }
    }

    pub fn derivative(&self, x: T) -> T {
        if x.abs() <= self.half_width {
            self.inside(x).1
        } else {
            self.outside(x).1
        }
    }
}

/// Largest violation of continuity and of the flux condition
/// `(λ+μ) w′(inside) = λ w′(outside)` at `x = ±L`.
pub fn boundary_matching_check<T: Real>(w: &PiecewiseEigenfunction<T>, reg: &RegularizationParams<T>) -> T {
    let l = w.half_width;
    [l, -l].iter().fold(T::zero(), |worst, &x| {
        let (vi, di) = w.inside(x);
        let (vo, dout) = w.outside(x);
        let jump = (vi - vo).abs();
        let flux = ((reg.lambda + reg.mu) * di - reg.lambda * dout).abs();
        worst.max(jump).max(flux)
    })
}
