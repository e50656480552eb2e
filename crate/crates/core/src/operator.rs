//! Linear differential operators `𝒟 = Σ_α p_α ∂^α` and the regularized
//! operator `𝒪ₙ` they induce.
//!
//! `𝒪ₙ` is the inverse of the bilinear form
//!
//! ```text
//! B[u, v] = λ Σ_{|α|≤s} ∫_box ∂^α u ∂^α v̄ + μ ∫_Ω 𝒟u 𝒟v̄
//! ```
//!
//! on the periodic Sobolev space of the ambient box. With constant
//! coefficients and `Ω` equal to the box, `B` is diagonal in the Fourier
//! basis; otherwise it is assembled as a dense Galerkin matrix on a prefix of
//! the frequency ordering.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{
    axis_mode_integral, frequency_scale, sobolev_weight, BoxRegion, DomainSpec, Frequency, FrequencyOrdering,
};
use crate::scalar::{from_i64, lit, to_f64, Real};
use crate::spectrum::{sort_descending, Eigenfunctions, Provenance, Spectrum, SpectrumParams};

/// Multi-index `α` with its coefficient `c` in a term `c x^e ∂^α`.
type DerivativeTerm<T> = (Vec<u32>, T);

/// `c · Π_j x_j^{e_j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial<T> {
    pub coeff: T,
    pub powers: Vec<u32>,
}

/// A named polynomial coefficient function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial<T> {
    pub name: String,
    pub terms: Vec<Monomial<T>>,
}

impl<T: Real> Polynomial<T> {
    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().fold(T::zero(), |acc, m| {
            acc + m
                .powers
                .iter()
                .zip(x)
                .fold(m.coeff, |p, (&e, &xj)| p * xj.powi(e as i32))
        })
    }

    /// `Σ |c| Π max(|lo_j|, |hi_j|)^{e_j}`, an upper bound for `sup_Ω |p|`.
    pub fn sup_bound(&self, omega: &BoxRegion<T>) -> T {
        self.terms.iter().fold(T::zero(), |acc, m| {
            let reach = m
                .powers
                .iter()
                .zip(omega.lo.iter().zip(&omega.hi))
                .fold(T::one(), |p, (&e, (&a, &b))| p * a.abs().max(b.abs()).powi(e as i32));
            acc + m.coeff.abs() * reach
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coefficient<T> {
    Constant(T),
    Polynomial(Polynomial<T>),
}

impl<T: Real> Coefficient<T> {
    pub fn eval(&self, x: &[T]) -> T {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Polynomial(p) => p.eval(x),
        }
    }

    /// The coefficient as a list of monomials.
    fn monomials(&self, dim: usize) -> Vec<Monomial<T>> {
        match self {
            Coefficient::Constant(c) => vec![Monomial {
                coeff: *c,
                powers: vec![0; dim],
            }],
            Coefficient::Polynomial(p) => p.terms.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorTerm<T> {
    pub alpha: Vec<u32>,
    pub coeff: Coefficient<T>,
}

/// `𝒟 = Σ_{|α|≤s} p_α ∂^α` on `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexOperator<T> {
    pub dim: usize,
    pub order: u32,
    pub terms: Vec<OperatorTerm<T>>,
}

impl<T: Real> MultiIndexOperator<T> {
    pub fn new(dim: usize, order: u32, terms: Vec<OperatorTerm<T>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension", "must be at least 1"));
        }
        for t in &terms {
            if t.alpha.len() != dim {
                return Err(Error::invalid("operator", "multi-index length differs from dimension"));
            }
            if t.alpha.iter().sum::<u32>() > order {
                return Err(Error::invalid("operator", format!("|α| exceeds order {order}")));
            }
            match &t.coeff {
                Coefficient::Constant(c) if !c.is_finite() => {
                    return Err(Error::invalid("operator", "coefficient must be finite"));
                }
                Coefficient::Polynomial(p)
                    if p.terms.iter().any(|m| m.powers.len() != dim || !m.coeff.is_finite()) =>
                {
                    return Err(Error::invalid(
                        "operator",
                        format!("polynomial {:?} has wrong arity or a non-finite coefficient", p.name),
                    ));
                }
                _ => {}
            }
        }
        Ok(Self { dim, order, terms })
    }

    /// `𝒟 = d/dx` in one dimension, with Sobolev order 1.
    pub fn derivative_1d() -> Self {
        Self {
            dim: 1,
            order: 1,
            terms: vec![OperatorTerm {
                alpha: vec![1],
                coeff: Coefficient::Constant(T::one()),
            }],
        }
    }

    /// `𝒟 = Δ` with Sobolev order 2.
    pub fn laplacian(dim: usize) -> Result<Self> {
        let terms = (0..dim)
            .map(|j| {
                let mut alpha = vec![0; dim];
                alpha[j] = 2;
                OperatorTerm {
                    alpha,
                    coeff: Coefficient::Constant(T::one()),
                }
            })
            .collect();
        Self::new(dim, 2, terms)
    }

    /// `𝒟 = 0`: the unregularized Sobolev ridge problem.
    pub fn zero(dim: usize, order: u32) -> Self {
        Self {
            dim,
            order,
            terms: Vec::new(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| matches!(t.coeff, Coefficient::Constant(_)))
    }

    /// True for exactly `d/dx` in one dimension at Sobolev order 1.
    pub fn is_derivative_1d(&self) -> bool {
        if self.dim != 1 || self.order != 1 {
            return false;
        }
        let mut total = BTreeMap::new();
        for t in &self.terms {
            match t.coeff {
                Coefficient::Constant(c) => *total.entry(t.alpha[0]).or_insert(T::zero()) += c,
                Coefficient::Polynomial(_) => return false,
            }
        }
        total.iter().all(|(&a, &c)| if a == 1 { c == T::one() } else { c == T::zero() })
            && total.contains_key(&1)
    }

    /// Symbol `σ(k) = Σ_α p_α Π_j (i ω k_j)^{α_j}` of a constant-coefficient
    /// operator, so that `𝒟 e_k = σ(k) e_k`.
    pub fn symbol(&self, k: &Frequency, half_width: T) -> Result<Complex<T>> {
        if !self.is_constant() {
            return Err(Error::Unsupported(
                "operator symbol needs constant coefficients; assemble a Galerkin system instead".into(),
            ));
        }
        let omega = frequency_scale(half_width);
        Ok(self.terms.iter().fold(Complex::new(T::zero(), T::zero()), |acc, t| {
            let c = match t.coeff {
                Coefficient::Constant(c) => c,
                Coefficient::Polynomial(_) => unreachable!(),
            };
            acc + derivative_factor(&t.alpha, k, omega) * c
        }))
    }

    /// `max_α sup_Ω |p_α|`.
    pub fn sup_bound(&self, omega: &BoxRegion<T>) -> T {
        self.terms.iter().fold(T::zero(), |acc, t| {
            let b = match &t.coeff {
                Coefficient::Constant(c) => c.abs(),
                Coefficient::Polynomial(p) => p.sup_bound(omega),
            };
            acc.max(b)
        })
    }

    /// `(𝒟 f)(x)` for a real trigonometric mode `f`.
    pub fn apply_mode(&self, mode: &RealMode, x: &[T], half_width: T) -> T {
        self.terms.iter().fold(T::zero(), |acc, t| {
            acc + t.coeff.eval(x) * mode.derivative(&t.alpha, x, half_width)
        })
    }

    /// `𝒟 e_k = Σ_e q_e(k) x^e e_k`: groups the operator by monomial power
    /// `e`, returning each `e` with its `(α, c)` contributions.
    fn by_power(&self) -> Vec<(Vec<u32>, Vec<DerivativeTerm<T>>)> {
        let mut groups: BTreeMap<Vec<u32>, Vec<DerivativeTerm<T>>> = BTreeMap::new();
        for t in &self.terms {
            for m in t.coeff.monomials(self.dim) {
                groups.entry(m.powers).or_default().push((t.alpha.clone(), m.coeff));
            }
        }
        groups.into_iter().collect()
    }
}

impl<T: Real> fmt::Display for MultiIndexOperator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            match &t.coeff {
                Coefficient::Constant(c) => write!(f, "{c}")?,
                Coefficient::Polynomial(p) => write!(f, "{}", p.name)?,
            }
            write!(f, "·∂^{:?}", t.alpha)?;
        }
        Ok(())
    }
}

/// `Π_j (i ω k_j)^{α_j}`.
fn derivative_factor<T: Real>(alpha: &[u32], k: &Frequency, omega: T) -> Complex<T> {
    let order: u32 = alpha.iter().sum();
    let magnitude = alpha
        .iter()
        .zip(&k.0)
        .fold(T::one(), |acc, (&a, &kj)| acc * (omega * from_i64::<T>(kj)).powi(a as i32));
    // i^order
    match order % 4 {
        0 => Complex::new(magnitude, T::zero()),
        1 => Complex::new(T::zero(), magnitude),
        2 => Complex::new(-magnitude, T::zero()),
        _ => Complex::new(T::zero(), -magnitude),
    }
}

/// Regularization weights `λₙ > 0` (Sobolev term) and `μₙ ≥ 0` (physics term).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams<T> {
    pub lambda: T,
    pub mu: T,
}

impl<T: Real> RegularizationParams<T> {
    pub fn new(lambda: T, mu: T) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::invalid("lambda", "λₙ must be > 0 and finite"));
        }
        if !(mu >= T::zero()) || !mu.is_finite() {
            return Err(Error::invalid("mu", "μₙ must be ≥ 0 and finite"));
        }
        Ok(Self { lambda, mu })
    }

    /// `γ = sqrt(λ / (λ + μ))`.
    pub fn gamma(&self) -> T {
        (self.lambda / (self.lambda + self.mu)).sqrt()
    }
}

/// Eigenvalue `a_k = [λ w(k) + μ |σ(k)|²]⁻¹` of `𝒪ₙ` on the Fourier mode
/// `e_k`, valid for constant coefficients and `Ω` equal to the ambient box.
pub fn spectral_eigenvalue<T: Real>(
    k: &Frequency,
    op: &MultiIndexOperator<T>,
    reg: &RegularizationParams<T>,
    half_width: T,
) -> Result<T> {
    let sigma = op.symbol(k, half_width)?;
    let w = sobolev_weight(k, op.order, half_width);
    Ok(T::one() / (reg.lambda * w + reg.mu * sigma.norm_sqr()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeKind {
    Const,
    Cos,
    Sin,
}

/// Real trigonometric mode: `1`, `cos(ω⟨k,x⟩)` or `sin(ω⟨k,x⟩)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RealMode {
    pub freq: Frequency,
    pub kind: ModeKind,
}

impl RealMode {
    pub fn eval<T: Real>(&self, x: &[T], half_width: T) -> T {
        self.derivative(&vec![0; x.len()], x, half_width)
    }

    /// `∂^α` of the mode at `x`.
    pub fn derivative<T: Real>(&self, alpha: &[u32], x: &[T], half_width: T) -> T {
        let order: u32 = alpha.iter().sum();
        if self.kind == ModeKind::Const {
            return if order == 0 { T::one() } else { T::zero() };
        }
        let omega = frequency_scale(half_width);
        let mut scale = T::one();
        let mut phase = T::zero();
        for ((&a, &k), &xj) in alpha.iter().zip(&self.freq.0).zip(x) {
            let wk = omega * from_i64::<T>(k);
            scale *= wk.powi(a as i32);
            phase += wk * xj;
        }
        // d^n/dθ^n cos θ = cos(θ + nπ/2), likewise for sin.
        let (s, c) = phase.sin_cos();
        let (s, c) = match order % 4 {
            0 => (s, c),
            1 => (c, -s),
            2 => (-s, -c),
            _ => (-c, s),
        };
        scale
            * match self.kind {
                ModeKind::Cos => c,
                ModeKind::Sin => s,
                ModeKind::Const => unreachable!(),
            }
    }

    /// `∫_box mode²`.
    pub fn box_norm_sqr<T: Real>(&self, dom: &DomainSpec<T>) -> T {
        match self.kind {
            ModeKind::Const => dom.box_volume(),
            _ => dom.box_volume() * lit(0.5),
        }
    }
}

impl fmt::Display for RealMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModeKind::Const => write!(f, "1"),
            ModeKind::Cos => write!(f, "cos{}", self.freq),
            ModeKind::Sin => write!(f, "sin{}", self.freq),
        }
    }
}

/// Default memory budget for a Galerkin system: 1 GiB.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

/// Dense Galerkin discretisation of `B` on the retained frequencies.
///
/// The complex matrices are indexed by `frequencies`; the real matrices by
/// `modes`, the cosine/sine basis spanning the same space.
#[derive(Clone, Debug)]
pub struct GalerkinSystem<T: Real> {
    pub n_max: usize,
    pub frequencies: Vec<Frequency>,
    /// `B[e_{k(j)}, e_{k(l)}]`.
    pub b_matrix: DMatrix<Complex<T>>,
    /// `∫_Ω e_{k(j)} ē_{k(l)}`.
    pub mass_omega: DMatrix<Complex<T>>,
    pub modes: Vec<RealMode>,
    /// `B` on the real basis.
    pub real_b: DMatrix<T>,
    /// `∫_Ω` mass matrix on the real basis.
    pub real_mass: DMatrix<T>,
    /// `∫_box` mass of each real mode (the box mass matrix is diagonal).
    pub box_mass: Vec<T>,
    pub op: MultiIndexOperator<T>,
    pub reg: RegularizationParams<T>,
    pub dom: DomainSpec<T>,
}

/// Smallest `N` with `λ w(k(N)) > 10⁶ (λ + μ)`: modes past `N` are damped
/// by a factor below `10⁻⁶` relative to the leading ones.
pub fn default_n_max<T: Real>(op: &MultiIndexOperator<T>, reg: &RegularizationParams<T>, half_width: T) -> Result<usize> {
    const CAP: usize = 1 << 22;
    let none = || {
        Error::invalid(
            "n_max",
            "no default truncation below 2^22 modes for this Sobolev order; pass n_max explicitly",
        )
    };
    if op.order == 0 {
        return Err(none());
    }
    let ordering = FrequencyOrdering::new(op.dim)?;
    let target = lit::<T>(1e6) * (reg.lambda + reg.mu);
    let mut seen = 0usize;
    for radius in 0.. {
        for k in ordering.level(radius) {
            seen += 1;
            if reg.lambda * sobolev_weight(&k, op.order, half_width) > target {
                return Ok(seen);
            }
            if seen >= CAP {
                return Err(none());
            }
        }
    }
    unreachable!()
}

/// The first `n_max` frequencies with every `k` whose `-k` falls outside the
/// prefix removed, so the retained set is closed under negation.
pub fn paired_prefix(dim: usize, n_max: usize) -> Result<Vec<Frequency>> {
    let prefix = FrequencyOrdering::new(dim)?.prefix(n_max);
    let set: std::collections::HashSet<&Frequency> = prefix.iter().collect();
    Ok(prefix.iter().filter(|k| set.contains(&k.neg())).cloned().collect())
}

pub fn assemble_galerkin<T: Real>(
    op: &MultiIndexOperator<T>,
    reg: &RegularizationParams<T>,
    dom: &DomainSpec<T>,
    n_max: usize,
) -> Result<GalerkinSystem<T>> {
    assemble_galerkin_with_budget(op, reg, dom, n_max, DEFAULT_MEMORY_BUDGET)
}

pub fn assemble_galerkin_with_budget<T: Real>(
    op: &MultiIndexOperator<T>,
    reg: &RegularizationParams<T>,
    dom: &DomainSpec<T>,
    n_max: usize,
    memory_budget: usize,
) -> Result<GalerkinSystem<T>> {
    if n_max == 0 {
        return Err(Error::invalid("n_max", "must be at least 1"));
    }
    if op.dim != dom.dim {
        return Err(Error::invalid("operator", "dimension differs from the domain"));
    }
    // Two complex and two real n×n matrices, plus eigensolver workspace of
    // about two more real ones.
    let required = n_max
        .saturating_mul(n_max)
        .saturating_mul(std::mem::size_of::<T>())
        .saturating_mul(8);
    if required > memory_budget {
        return Err(Error::MemoryBudget {
            modes: n_max,
            required,
            budget: memory_budget,
        });
    }

    let frequencies = paired_prefix(op.dim, n_max)?;
    let n = frequencies.len();
    let omega = dom.frequency_scale();
    let half_width = dom.half_width;
    let vol = dom.box_volume();

    // One-dimensional integrals ∫_{lo_j}^{hi_j} x^p e^{iωΔx} dx, cached by
    // (axis, p, Δ).
    let groups = op.by_power();
    let max_pow: Vec<u32> = (0..op.dim)
        .map(|j| groups.iter().map(|(e, _)| e[j]).max().unwrap_or(0))
        .collect();
    let max_k: Vec<i64> = (0..op.dim)
        .map(|j| frequencies.iter().map(|k| k.0[j].abs()).max().unwrap_or(0))
        .collect();
    let cache: Vec<Vec<Vec<Complex<T>>>> = (0..op.dim)
        .map(|j| {
            let r = 2 * max_k[j];
            (0..=2 * max_pow[j])
                .map(|p| {
                    (-r..=r).map(|delta| axis_mode_integral(dom, j, p, delta)).collect()
                })
                .collect()
        })
        .collect();
    let integral = |powers: &[u32], k: &Frequency, l: &Frequency| -> Complex<T> {
        (0..op.dim).fold(Complex::new(T::one(), T::zero()), |acc, j| {
            let delta = k.0[j] - l.0[j];
            acc * cache[j][powers[j] as usize][(delta + 2 * max_k[j]) as usize]
        })
    };

    // q_e(k) for every frequency and power group.
    let q: Vec<Vec<Complex<T>>> = frequencies
        .iter()
        .map(|k| {
            groups
                .iter()
                .map(|(_, contribs)| {
                    contribs.iter().fold(Complex::new(T::zero(), T::zero()), |acc, (alpha, c)| {
                        acc + derivative_factor(alpha, k, omega) * *c
                    })
                })
                .collect()
        })
        .collect();
    let sobolev: Vec<T> = frequencies
        .iter()
        .map(|k| reg.lambda * sobolev_weight(k, op.order, half_width) * vol)
        .collect();
    let zero_pow = vec![0u32; op.dim];
    let physics = reg.mu > T::zero() && !groups.is_empty();

    // Upper triangle, row-parallel.
    let rows: Vec<Vec<(Complex<T>, Complex<T>)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (j..n)
                .map(|l| {
                    let (kj, kl) = (&frequencies[j], &frequencies[l]);
                    let mass = integral(&zero_pow, kj, kl);
                    let mut b = Complex::new(if j == l { sobolev[j] } else { T::zero() }, T::zero());
                    if physics {
                        let mut acc = Complex::new(T::zero(), T::zero());
                        for (ge, (e, _)) in groups.iter().enumerate() {
                            for (gf, (f, _)) in groups.iter().enumerate() {
                                let powers: Vec<u32> = e.iter().zip(f).map(|(a, b)| a + b).collect();
                                acc += q[j][ge] * q[l][gf].conj() * integral(&powers, kj, kl);
                            }
                        }
                        b += acc * reg.mu;
                    }
                    (b, mass)
                })
                .collect()
        })
        .collect();
    let mut b_matrix = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
    let mut mass_omega = b_matrix.clone();
    for (j, row) in rows.into_iter().enumerate() {
        for (off, (b, m)) in row.into_iter().enumerate() {
            let l = j + off;
            b_matrix[(j, l)] = b;
            mass_omega[(j, l)] = m;
            if l != j {
                b_matrix[(l, j)] = b.conj();
                mass_omega[(l, j)] = m.conj();
            } else {
                // Exactly Hermitian diagonal.
                b_matrix[(j, j)].im = T::zero();
                mass_omega[(j, j)].im = T::zero();
            }
        }
    }

    let (modes, transform) = real_basis(&frequencies);
    let real_b = to_real(&b_matrix, &transform);
    let real_mass = to_real(&mass_omega, &transform);
    let box_mass = modes.iter().map(|m| m.box_norm_sqr(dom)).collect();
    Ok(GalerkinSystem {
        n_max,
        frequencies,
        b_matrix,
        mass_omega,
        modes,
        real_b,
        real_mass,
        box_mass,
        op: op.clone(),
        reg: *reg,
        dom: dom.clone(),
    })
}

/// Column `r` of the change of basis lists the frequency indices `j` and
/// weights `T[j, r]` with `mode_r = Σ_j T[j, r] e_j`.
type Transform<T> = Vec<Vec<(usize, Complex<T>)>>;

fn real_basis<T: Real>(frequencies: &[Frequency]) -> (Vec<RealMode>, Transform<T>) {
    let index: std::collections::HashMap<&Frequency, usize> =
        frequencies.iter().enumerate().map(|(j, k)| (k, j)).collect();
    let half = lit::<T>(0.5);
    let zero = T::zero();
    let mut modes = Vec::with_capacity(frequencies.len());
    let mut transform = Vec::with_capacity(frequencies.len());
    for (j, k) in frequencies.iter().enumerate() {
        if k.is_zero() {
            modes.push(RealMode {
                freq: k.clone(),
                kind: ModeKind::Const,
            });
            transform.push(vec![(j, Complex::new(T::one(), zero))]);
        } else if k.is_positive() {
            let jn = index[&k.neg()];
            // cos = (e_k + e_{-k}) / 2, sin = (e_k - e_{-k}) / (2i).
            modes.push(RealMode {
                freq: k.clone(),
                kind: ModeKind::Cos,
            });
            transform.push(vec![(j, Complex::new(half, zero)), (jn, Complex::new(half, zero))]);
            modes.push(RealMode {
                freq: k.clone(),
                kind: ModeKind::Sin,
            });
            transform.push(vec![(j, Complex::new(zero, -half)), (jn, Complex::new(zero, half))]);
        }
    }
    (modes, transform)
}

/// `Re(Tᵀ A T̄)` for a sesquilinear form matrix `A`.
fn to_real<T: Real>(a: &DMatrix<Complex<T>>, transform: &Transform<T>) -> DMatrix<T> {
    let n = transform.len();
    let cols: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|s| {
            (0..n)
                .map(|r| {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for &(j, tj) in &transform[r] {
                        for &(l, tl) in &transform[s] {
                            acc += tj * tl.conj() * a[(j, l)];
                        }
                    }
                    acc.re
                })
                .collect()
        })
        .collect();
    let mut out = DMatrix::from_fn(n, n, |r, s| cols[s][r]);
    symmetrize(&mut out);
    out
}

fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = lit::<T>(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Which operator a truncated spectrum describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumTarget {
    /// `𝒪ₙ` itself, on `L²(box)`: `B v = ν D v` with `D` the box mass,
    /// eigenvalues `a = 1/ν`, eigenfunctions normalized in `L²(box)`.
    Full,
    /// `C 𝒪ₙ C` with `C` the restriction to Ω: `M_Ω v = a B v`,
    /// eigenfunctions normalized in `L²(Ω)`. Only positive eigenvalues are
    /// kept.
    Restricted,
}

/// Eigenvalues of the truncated operator, sorted non-increasing, with their
/// eigenfunctions in the real basis.
pub fn truncated_spectrum<T: Real>(sys: &GalerkinSystem<T>, target: SpectrumTarget) -> Result<Spectrum<T>> {
    let n = sys.real_b.nrows();
    let condition = condition_estimate(&sys.real_b);
    let (values, vectors) = match target {
        SpectrumTarget::Full => {
            let scale: Vec<T> = sys.box_mass.iter().map(|&d| T::one() / d.sqrt()).collect();
            let a = DMatrix::from_fn(n, n, |i, j| sys.real_b[(i, j)] * scale[i] * scale[j]);
            let eig = SymmetricEigen::new(a);
            check_finite(eig.eigenvalues.as_slice(), condition)?;
            if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.partial_cmp(b).unwrap()) {
                if !(min > T::zero()) {
                    return Err(Error::EigenSolver {
                        reason: format!("B has non-positive generalized eigenvalue {min:e}"),
                        condition,
                    });
                }
            }
            let values: Vec<T> = eig.eigenvalues.iter().map(|&nu| T::one() / nu).collect();
            let mut vectors = eig.eigenvectors;
            for (i, s) in scale.iter().enumerate() {
                vectors.row_mut(i).scale_mut(*s);
            }
            (values, vectors)
        }
        SpectrumTarget::Restricted => {
            let chol = sys.real_b.clone().cholesky().ok_or_else(|| Error::EigenSolver {
                reason: "Cholesky factorization of B failed".into(),
                condition,
            })?;
            let l = chol.l();
            let x = l.solve_lower_triangular(&sys.real_mass).ok_or_else(|| Error::EigenSolver {
                reason: "triangular solve failed".into(),
                condition,
            })?;
            let mut c = l
                .solve_lower_triangular(&x.transpose())
                .ok_or_else(|| Error::EigenSolver {
                    reason: "triangular solve failed".into(),
                    condition,
                })?;
            symmetrize(&mut c);
            let eig = SymmetricEigen::new(c);
            check_finite(eig.eigenvalues.as_slice(), condition)?;
            let top = eig.eigenvalues.iter().fold(T::zero(), |m, &v| m.max(v));
            // Directions outside Ω leave numerical noise of size ~eps·top.
            let floor = top * T::eps().powf(lit(0.75));
            let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > floor).collect();
            let mut vectors = DMatrix::zeros(n, keep.len());
            let mut values = Vec::with_capacity(keep.len());
            for (col, &i) in keep.iter().enumerate() {
                let a = eig.eigenvalues[i];
                // vᵀBv = 1 ⇒ vᵀ M_Ω v = a; rescale to unit L²(Ω) norm.
                let y: DVector<T> = eig.eigenvectors.column(i).into_owned();
                let v = l.tr_solve_lower_triangular(&y).ok_or_else(|| Error::EigenSolver {
                    reason: "triangular solve failed".into(),
                    condition,
                })?;
                vectors.set_column(col, &(v / a.sqrt()));
                values.push(a);
            }
            (values, vectors)
        }
    };

    let mut order: Vec<(T, usize)> = values.iter().copied().zip(0..).collect();
    sort_descending(&mut order);
    let sorted_vectors = DMatrix::from_fn(vectors.nrows(), order.len(), |i, c| vectors[(i, order[c].1)]);
    Ok(Spectrum {
        values: order.iter().map(|p| p.0).collect(),
        provenance: vec![Provenance::Galerkin; order.len()],
        params: Some(SpectrumParams {
            lambda: sys.reg.lambda,
            mu: sys.reg.mu,
            half_width: sys.dom.half_width,
            order: sys.op.order,
            dim: sys.op.dim,
        }),
        eigenfunctions: Some(Eigenfunctions::Modes {
            modes: sys.modes.clone(),
            half_width: sys.dom.half_width,
            vectors: sorted_vectors,
        }),
    })
}

/// The first `count` eigenvalues `a_k` of `𝒪ₙ` from the diagonal formula,
/// sorted non-increasing (constant coefficients, Ω = ambient box).
pub fn diagonal_spectrum<T: Real>(
    op: &MultiIndexOperator<T>,
    reg: &RegularizationParams<T>,
    half_width: T,
    count: usize,
) -> Result<Spectrum<T>> {
    let freqs = FrequencyOrdering::new(op.dim)?.prefix(count);
    let mut vals = freqs
        .iter()
        .map(|k| spectral_eigenvalue(k, op, reg, half_width).map(|a| (a, ())))
        .collect::<Result<Vec<_>>>()?;
    sort_descending(&mut vals);
    Ok(Spectrum {
        values: vals.into_iter().map(|p| p.0).collect(),
        provenance: vec![Provenance::ClosedForm; count],
        params: Some(SpectrumParams {
            lambda: reg.lambda,
            mu: reg.mu,
            half_width,
            order: op.order,
            dim: op.dim,
        }),
        eigenfunctions: None,
    })
}

fn condition_estimate<T: Real>(m: &DMatrix<T>) -> f64 {
    let diag: Vec<f64> = m.diagonal().iter().map(|&v| to_f64(v).abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn check_finite<T: Real>(values: &[T], condition: f64) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::EigenSolver {
            reason: "non-finite eigenvalue".into(),
            condition,
        })
    }
}
