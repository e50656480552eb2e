//! Fourier representation of the periodic Sobolev space on the ambient box
//! `[-2L, 2L]^d`.
//!
//! Modes are `e_k(x) = exp(i ω ⟨k, x⟩)` with `ω = π / (2L)`, so every mode is
//! `4L`-periodic in each coordinate. All inner products are unnormalized
//! integrals (no `1/|Ω|` factor): `∫_box e_k ē_l = (4L)^d δ_{kl}`.

use std::fmt;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_i64, lit, Real};

/// A frequency `k ∈ Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frequency(pub Vec<i64>);

impl Frequency {
    pub fn zero(dim: usize) -> Self {
        Frequency(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1(&self) -> u64 {
        self.0.iter().map(|k| k.unsigned_abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    pub fn neg(&self) -> Self {
        Frequency(self.0.iter().map(|k| -k).collect())
    }

    pub fn components(&self) -> &[i64] {
        &self.0
    }

    /// True for the representative of the pair `{k, -k}` that comes last in
    /// lexicographic order (its first non-zero component is positive).
    pub fn is_positive(&self) -> bool {
        self.0.iter().find(|&&k| k != 0).is_some_and(|&k| k > 0)
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

/// Enumeration `j ↦ k(j)` of `Z^d`: non-decreasing in `‖k‖₁`, lexicographic
/// on `(k₁, …, k_d)` inside each `‖·‖₁` level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrequencyOrdering {
    dim: usize,
}

impl FrequencyOrdering {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension", "must be at least 1"));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of `k ∈ Z^dim` with `‖k‖₁ = radius`.
    pub fn level_size(dim: usize, radius: u64) -> u128 {
        if dim == 0 {
            return u128::from(radius == 0);
        }
        if radius == 0 {
            return 1;
        }
        if dim == 1 {
            return 2;
        }
        // First coordinate t contributes |t|; the rest fill radius - |t|.
        let mut total = Self::level_size(dim - 1, radius);
        for t in 1..=radius {
            total += 2 * Self::level_size(dim - 1, radius - t);
        }
        total
    }

    /// The `j`-th frequency.
    pub fn index_map(&self, j: u64) -> Frequency {
        let mut rest = u128::from(j);
        let mut radius = 0u64;
        loop {
            let size = Self::level_size(self.dim, radius);
            if rest < size {
                break;
            }
            rest -= size;
            radius += 1;
        }
        let mut out = Vec::with_capacity(self.dim);
        Self::descend(self.dim, radius, rest, &mut out);
        Frequency(out)
    }

    fn descend(dim: usize, radius: u64, mut rest: u128, out: &mut Vec<i64>) {
        if dim == 0 {
            return;
        }
        let r = radius as i64;
        for t in -r..=r {
            let remaining = radius - t.unsigned_abs();
            let count = Self::level_size(dim - 1, remaining);
            if rest < count {
                out.push(t);
                Self::descend(dim - 1, remaining, rest, out);
                return;
            }
            rest -= count;
        }
        unreachable!("index exceeds level size");
    }

    /// The first `n` frequencies, in order.
    pub fn prefix(&self, n: usize) -> Vec<Frequency> {
        let mut out = Vec::with_capacity(n);
        let mut radius = 0u64;
        while out.len() < n {
            let mut buf = Vec::with_capacity(self.dim);
            Self::emit_level(self.dim, radius, &mut buf, &mut out, n);
            radius += 1;
        }
        out
    }

    /// All frequencies with `‖k‖₁ = radius`, in order.
    pub fn level(&self, radius: u64) -> Vec<Frequency> {
        let mut out = Vec::new();
        Self::emit_level(self.dim, radius, &mut Vec::with_capacity(self.dim), &mut out, usize::MAX);
        out
    }

    fn emit_level(dim: usize, radius: u64, buf: &mut Vec<i64>, out: &mut Vec<Frequency>, cap: usize) {
        if out.len() >= cap {
            return;
        }
        if dim == 0 {
            if radius == 0 {
                out.push(Frequency(buf.clone()));
            }
            return;
        }
        let r = radius as i64;
        for t in -r..=r {
            buf.push(t);
            Self::emit_level(dim - 1, radius - t.unsigned_abs(), buf, out, cap);
            buf.pop();
        }
    }
}

/// All multi-indices `α ∈ N^dim` with `|α| ≤ order`, graded by `|α|`.
pub fn multi_indices(dim: usize, order: u32) -> Vec<Vec<u32>> {
    fn fill(dim: usize, total: u32, buf: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if dim == 1 {
            buf.push(total);
            out.push(buf.clone());
            buf.pop();
            return;
        }
        for first in (0..=total).rev() {
            buf.push(first);
            fill(dim - 1, total - first, buf, out);
            buf.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=order {
        fill(dim, total, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// Frequency scale `π / (2L)` of the ambient box.
pub fn frequency_scale<T: Real>(half_width: T) -> T {
    T::PI() / (half_width + half_width)
}

/// `Σ_{|α|≤s} (π/2L)^{2|α|} Π_j k_j^{2α_j}`: the squared `H^s` norm of `e_k`
/// divided by `(4L)^d`.
pub fn sobolev_weight<T: Real>(k: &Frequency, order: u32, half_width: T) -> T {
    let omega = frequency_scale(half_width);
    let scaled: Vec<T> = k.0.iter().map(|&kj| omega * from_i64::<T>(kj)).collect();
    multi_indices(k.dim(), order)
        .iter()
        .map(|alpha| {
            alpha
                .iter()
                .zip(&scaled)
                .fold(T::one(), |acc, (&a, &w)| acc * w.powi(2 * a as i32))
        })
        .fold(T::zero(), |acc, term| acc + term)
}

/// `exp(i ω ⟨k, x⟩)`.
pub fn mode_eval<T: Real>(k: &Frequency, x: &[T], half_width: T) -> Complex<T> {
    debug_assert_eq!(k.dim(), x.len());
    let omega = frequency_scale(half_width);
    let phase = k
        .0
        .iter()
        .zip(x)
        .fold(T::zero(), |acc, (&kj, &xj)| acc + from_i64::<T>(kj) * xj);
    let (s, c) = (omega * phase).sin_cos();
    Complex::new(c, s)
}

/// `∫_a^b x^p exp(i c x) dx` in closed form.
///
/// Uses the integration-by-parts recurrence for `c ≠ 0`; callers only pass
/// `c = ω m` with integer `m`, so `|c| ≥ π / (2L)` whenever it is non-zero.
pub fn monomial_exp_integral<T: Real>(power: u32, c: T, a: T, b: T) -> Complex<T> {
    if c == T::zero() {
        let p1 = from_i64::<T>(i64::from(power) + 1);
        return Complex::new((b.powi(power as i32 + 1) - a.powi(power as i32 + 1)) / p1, T::zero());
    }
    let ic = Complex::new(T::zero(), c);
    let eb = Complex::new((c * b).cos(), (c * b).sin());
    let ea = Complex::new((c * a).cos(), (c * a).sin());
    let mut integral = (eb - ea) / ic;
    let (mut pb, mut pa) = (T::one(), T::one());
    for p in 1..=power {
        pb *= b;
        pa *= a;
        let boundary = (eb * pb - ea * pa) / ic;
        integral = boundary - integral * from_i64::<T>(i64::from(p)) / ic;
    }
    integral
}

/// Axis-aligned observation region `Π_j [lo_j, hi_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> BoxRegion<T> {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> T {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(T::one(), |acc, (&a, &b)| acc * (b - a))
    }

    pub fn contains(&self, x: &[T], tol: T) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&xi, (&a, &b))| xi >= a - tol && xi <= b + tol)
    }
}

/// Ambient box `[-2L, 2L]^d`, observation box `Ω ⊆ [-2L, 2L]^d` and density
/// bound `κ` of `ℙ_X` on Ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec<T> {
    pub dim: usize,
    pub half_width: T,
    pub omega: BoxRegion<T>,
    pub kappa: T,
}

impl<T: Real> DomainSpec<T> {
    pub fn new(half_width: T, omega: BoxRegion<T>, kappa: T) -> Result<Self> {
        let dim = omega.dim();
        if dim == 0 || omega.hi.len() != dim {
            return Err(Error::invalid("omega", "box bounds must share a positive dimension"));
        }
        if !(half_width > T::zero()) {
            return Err(Error::invalid("L", "half-width must be positive"));
        }
        if !(kappa > T::zero()) {
            return Err(Error::invalid("kappa", "density bound must be positive"));
        }
        let outer = half_width + half_width;
        let slack = outer * lit::<T>(1e-12);
        for (&a, &b) in omega.lo.iter().zip(&omega.hi) {
            if !(a < b) {
                return Err(Error::invalid("omega", "each side must satisfy lo < hi"));
            }
            if a < -outer - slack || b > outer + slack {
                return Err(Error::invalid("omega", "must lie inside [-2L, 2L]^d"));
            }
        }
        Ok(Self {
            dim,
            half_width,
            omega,
            kappa,
        })
    }

    /// `Ω = [-L, L]^d` with the uniform density bound `κ = (2L)^{-d}`.
    pub fn cube(dim: usize, half_width: T) -> Result<Self> {
        let omega = BoxRegion {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        };
        let kappa = T::one() / omega.volume();
        Self::new(half_width, omega, kappa)
    }

    /// `Ω = [-L, L]`.
    pub fn interval(half_width: T) -> Result<Self> {
        Self::cube(1, half_width)
    }

    /// `Ω` equal to the whole ambient box `[-2L, 2L]^d`.
    pub fn full_box(dim: usize, half_width: T) -> Result<Self> {
        let outer = half_width + half_width;
        let omega = BoxRegion {
            lo: vec![-outer; dim],
            hi: vec![outer; dim],
        };
        let kappa = T::one() / omega.volume();
        Self::new(half_width, omega, kappa)
    }

    pub fn with_kappa(mut self, kappa: T) -> Result<Self> {
        if !(kappa > T::zero()) {
            return Err(Error::invalid("kappa", "density bound must be positive"));
        }
        self.kappa = kappa;
        Ok(self)
    }

    pub fn frequency_scale(&self) -> T {
        frequency_scale(self.half_width)
    }

    /// `(4L)^d`, the squared L² norm of a mode over the ambient box.
    pub fn box_volume(&self) -> T {
        let side = lit::<T>(4.0) * self.half_width;
        side.powi(self.dim as i32)
    }

    pub fn omega_is_full_box(&self) -> bool {
        let outer = self.half_width + self.half_width;
        let tol = outer * lit::<T>(1e-12);
        self.omega
            .lo
            .iter()
            .zip(&self.omega.hi)
            .all(|(&a, &b)| (a + outer).abs() <= tol && (b - outer).abs() <= tol)
    }

    fn point_tol(&self) -> T {
        self.half_width * lit::<T>(1e-12)
    }

    pub fn in_omega(&self, x: &[T]) -> bool {
        self.omega.contains(x, self.point_tol())
    }

    pub fn in_box(&self, x: &[T]) -> bool {
        let outer = self.half_width + self.half_width;
        let tol = self.point_tol();
        x.len() == self.dim && x.iter().all(|&xi| xi.abs() <= outer + tol)
    }
}

/// `∫_{lo_j}^{hi_j} x^p e^{iωΔx} dx` along axis `j` of Ω.
///
/// An axis spanning a whole period `4L` gives an exact zero for `p = 0`,
/// `Δ ≠ 0`; the closed form would leave a rounding residue there.
pub fn axis_mode_integral<T: Real>(dom: &DomainSpec<T>, axis: usize, power: u32, delta: i64) -> Complex<T> {
    let (a, b) = (dom.omega.lo[axis], dom.omega.hi[axis]);
    if power == 0 && delta != 0 && b - a == dom.half_width * lit::<T>(4.0) {
        return Complex::new(T::zero(), T::zero());
    }
    monomial_exp_integral(power, dom.frequency_scale() * from_i64::<T>(delta), a, b)
}

/// `∫_Ω e_k ē_l`, product of one-dimensional closed-form integrals.
pub fn mode_inner_omega<T: Real>(k: &Frequency, l: &Frequency, dom: &DomainSpec<T>) -> Complex<T> {
    debug_assert_eq!(k.dim(), dom.dim);
    k.0.iter()
        .zip(&l.0)
        .enumerate()
        .fold(Complex::new(T::one(), T::zero()), |acc, (j, (&kj, &lj))| {
            acc * axis_mode_integral(dom, j, 0, kj - lj)
        })
}
