//! The reproducing kernel of the physics-regularized norm
//! `‖f‖²_RKHS = λₙ‖f‖²_{Hˢ} + μₙ‖𝒟f‖²_{L²(Ω)}`.
//!
//! Two backends:
//!
//! * [`Backend::ClosedForm1d`]: the explicit kernel for `d = 1`, `s = 1`,
//!   `𝒟 = d/dx`, `Ω = [-L, L]`. It is the Green's function of
//!   `λf − (λ+μ)f″ = δ_x` with Neumann conditions at `±L`, i.e. the kernel
//!   of the `H¹(Ω)` version of the norm.
//! * [`Backend::Spectral`]: `K(x, y) = Σ_m a_m v_m(x) v_m(y)` from the
//!   eigenpairs of the truncated Galerkin operator on the periodic box.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{multi_indices, DomainSpec};
use crate::operator::{
    assemble_galerkin, truncated_spectrum, GalerkinSystem, ModeKind, MultiIndexOperator, RealMode,
    RegularizationParams, SpectrumTarget,
};
use crate::quadrature::CompositeRule;
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::spectrum::{Eigenfunctions, Spectrum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    ClosedForm1d,
    Spectral { n_max: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig<T> {
    pub op: MultiIndexOperator<T>,
    pub reg: RegularizationParams<T>,
    pub dom: DomainSpec<T>,
    pub backend: Backend,
}

impl<T: Real> KernelConfig<T> {
    pub fn new(
        op: MultiIndexOperator<T>,
        reg: RegularizationParams<T>,
        dom: DomainSpec<T>,
        backend: Backend,
    ) -> Result<Self> {
        let reg = RegularizationParams::new(reg.lambda, reg.mu)?;
        if op.dim != dom.dim {
            return Err(Error::invalid("operator", "dimension differs from the domain"));
        }
        match backend {
            Backend::ClosedForm1d => {
                if !op.is_derivative_1d() {
                    return Err(Error::Unsupported(format!(
                        "closed-form kernel needs d = 1, s = 1 and D = d/dx, got {op}"
                    )));
                }
                let l = dom.half_width;
                let tol = l * lit::<T>(1e-12);
                if (dom.omega.lo[0] + l).abs() > tol || (dom.omega.hi[0] - l).abs() > tol {
                    return Err(Error::Unsupported("closed-form kernel needs Ω = [-L, L]".into()));
                }
            }
            Backend::Spectral { n_max } => {
                if n_max == 0 {
                    return Err(Error::invalid("n_max", "must be at least 1"));
                }
            }
        }
        Ok(Self { op, reg, dom, backend })
    }

    /// Closed-form kernel for `d/dx` on `[-L, L]`.
    pub fn closed_form_1d(reg: RegularizationParams<T>, half_width: T) -> Result<Self> {
        Self::new(
            MultiIndexOperator::derivative_1d(),
            reg,
            DomainSpec::interval(half_width)?,
            Backend::ClosedForm1d,
        )
    }

    pub fn gamma(&self) -> T {
        self.reg.gamma()
    }
}

/// Above this value of `γL` the closed form is evaluated in log space.
///
/// The verbatim expression cancels terms of size up to `e^{2γL}·γ/λ` down
/// to `K`, so it loses about `2γL/ln 10` digits; at `γL = 4` that is under
/// `10⁻¹²` on the `γ/λ` scale. The log-space form is accurate everywhere and
/// never overflows.
const LOG_SPACE_THRESHOLD: f64 = 4.0;

/// `log cosh(a)` for `a ≥ 0`, without overflow.
fn log_cosh<T: Real>(a: T) -> T {
    let a = a.abs();
    a + (-(a + a)).exp().ln_1p() - T::LN_2()
}

/// `log sinh(a)` for `a > 0`, without overflow.
fn log_sinh<T: Real>(a: T) -> T {
    a + (-(a + a)).exp().neg().ln_1p() - T::LN_2()
}

/// Closed-form kernel for `𝒟 = d/dx` on `[-L, L]`:
///
/// ```text
/// K(x,y) = γ / (2λ sinh(2γL)) · [ (cosh(2γL) + cosh(2γx)) cosh(γ(x−y))
///          + ((1 − 2·1{x>y}) sinh(2γL) − sinh(2γx)) sinh(γ(x−y)) ]
/// ```
///
/// with `γ = sqrt(λ/(λ+μ))`. When `γL > 4` the equivalent factorization
/// `cosh(γ(L+min)) cosh(γ(L−max)) · γ / (λ sinh(2γL))` is evaluated in log
/// space instead. Points must lie in `[-L, L]`.
pub fn closed_form_kernel_1d<T: Real>(reg: &RegularizationParams<T>, half_width: T, x: T, y: T) -> T {
    // The formula is symmetric in exact arithmetic; a canonical argument
    // order makes it symmetric bit for bit.
    let (x, y) = if x <= y { (x, y) } else { (y, x) };
    if reg.gamma() * half_width > lit(LOG_SPACE_THRESHOLD) {
        closed_form_log_space(reg, half_width, x, y)
    } else {
        closed_form_verbatim(reg, half_width, x, y)
    }
}

fn closed_form_verbatim<T: Real>(reg: &RegularizationParams<T>, l: T, x: T, y: T) -> T {
    let g = reg.gamma();
    let two = lit::<T>(2.0);
    let (s2l, c2l) = ((two * g * l).sinh(), (two * g * l).cosh());
    let (s2x, c2x) = ((two * g * x).sinh(), (two * g * x).cosh());
    let d = g * (x - y);
    // x = y sits on the jump of 1{x>y}; sinh(0) = 0 makes both branches
    // agree, and x ≤ y is used.
    let sign = if x > y { -T::one() } else { T::one() };
    g / (two * reg.lambda * s2l) * ((c2l + c2x) * d.cosh() + (sign * s2l - s2x) * d.sinh())
}

fn closed_form_log_space<T: Real>(reg: &RegularizationParams<T>, l: T, x: T, y: T) -> T {
    let g = reg.gamma();
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    let log_k = log_cosh(g * (l + lo)) + log_cosh(g * (l - hi)) - log_sinh(lit::<T>(2.0) * g * l);
    g / reg.lambda * log_k.exp()
}

/// `∂K(x, y)/∂y` of [`closed_form_kernel_1d`], from the factorized form
/// (`K·γ·tanh(γ(L+y))` for `y < x`, `−K·γ·tanh(γ(L−y))` for `y > x`).
pub fn closed_form_kernel_1d_dy<T: Real>(reg: &RegularizationParams<T>, half_width: T, x: T, y: T) -> T {
    let g = reg.gamma();
    let k = closed_form_kernel_1d(reg, half_width, x, y);
    if y < x {
        k * g * (g * (half_width + y)).tanh()
    } else {
        -k * g * (g * (half_width - y)).tanh()
    }
}

/// Spectral kernel data: the Galerkin system, the spectrum of `𝒪ₙ` and the
/// feature map `ψ(x) = diag(√a) Vᵀ φ(x)` with `φ` the real mode values.
#[derive(Debug)]
pub struct SpectralKernel<T: Real> {
    pub system: GalerkinSystem<T>,
    pub spectrum: Spectrum<T>,
    /// `V diag(√a)`: rows are modes, columns eigenpairs.
    weights: DMatrix<T>,
}

impl<T: Real> SpectralKernel<T> {
    pub fn new(
        op: &MultiIndexOperator<T>,
        reg: &RegularizationParams<T>,
        dom: &DomainSpec<T>,
        n_max: usize,
    ) -> Result<Self> {
        let system = assemble_galerkin(op, reg, dom, n_max)?;
        let spectrum = truncated_spectrum(&system, SpectrumTarget::Full)?;
        let Some(Eigenfunctions::Modes { vectors, .. }) = &spectrum.eigenfunctions else {
            unreachable!("Galerkin spectra carry mode eigenvectors");
        };
        let mut weights = vectors.clone();
        for (m, a) in spectrum.values.iter().enumerate() {
            weights.column_mut(m).scale_mut(a.sqrt());
        }
        Ok(Self {
            system,
            spectrum,
            weights,
        })
    }

    pub fn modes(&self) -> &[RealMode] {
        &self.system.modes
    }

    pub fn half_width(&self) -> T {
        self.system.dom.half_width
    }

    /// `φ(x)`: every real mode evaluated at `x`.
    pub fn basis_values(&self, x: &[T]) -> DVector<T> {
        let l = self.half_width();
        DVector::from_iterator(self.modes().len(), self.modes().iter().map(|m| m.eval(x, l)))
    }

    /// Row `i` is `φ(x_i)`.
    pub fn basis_matrix(&self, points: &[Vec<T>]) -> DMatrix<T> {
        let l = self.half_width();
        let modes = self.modes();
        let rows: Vec<Vec<T>> = points
            .par_iter()
            .map(|x| modes.iter().map(|m| m.eval(x, l)).collect())
            .collect();
        DMatrix::from_fn(points.len(), modes.len(), |i, j| rows[i][j])
    }

    /// Row `i` is `ψ(x_i)`, so `K(x_i, x_j) = ψ(x_i)·ψ(x_j)`.
    pub fn feature_matrix(&self, points: &[Vec<T>]) -> DMatrix<T> {
        self.basis_matrix(points) * &self.weights
    }

    /// Coefficients of `K(x, ·)` in the real mode basis: `V diag(a) Vᵀ φ(x)`.
    pub fn expansion(&self, x: &[T]) -> DVector<T> {
        &self.weights * (self.weights.transpose() * self.basis_values(x))
    }

    /// `θᵀ B θ` for `f = Σ θ_r mode_r`.
    pub fn rkhs_norm_sqr(&self, theta: &DVector<T>) -> T {
        theta.dot(&(&self.system.real_b * theta))
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        let px = self.weights.transpose() * self.basis_values(x);
        let py = self.weights.transpose() * self.basis_values(y);
        px.dot(&py)
    }
}

/// A kernel ready for evaluation: the configuration plus, for the spectral
/// backend, the precomputed eigen-decomposition.
#[derive(Clone, Debug)]
pub struct Kernel<T: Real> {
    pub cfg: KernelConfig<T>,
    spectral: Option<Arc<SpectralKernel<T>>>,
}

impl<T: Real> Kernel<T> {
    pub fn new(cfg: KernelConfig<T>) -> Result<Self> {
        let spectral = match cfg.backend {
            Backend::ClosedForm1d => None,
            Backend::Spectral { n_max } => Some(Arc::new(SpectralKernel::new(&cfg.op, &cfg.reg, &cfg.dom, n_max)?)),
        };
        Ok(Self { cfg, spectral })
    }

    pub fn spectral(&self) -> Option<&SpectralKernel<T>> {
        self.spectral.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.cfg.dom.dim
    }

    /// Errors unless `x` is a valid evaluation point for the backend:
    /// `Ω = [-L, L]` for the closed form, the ambient box for the spectral sum.
    pub fn check_point(&self, x: &[T]) -> Result<()> {
        let dom = &self.cfg.dom;
        let (ok, region) = match self.cfg.backend {
            Backend::ClosedForm1d => (
                x.len() == 1 && dom.in_omega(x),
                "Ω = [-L, L] (closed-form backend; use the spectral backend outside Ω)",
            ),
            Backend::Spectral { .. } => (dom.in_box(x), "the ambient box [-2L, 2L]^d"),
        };
        if ok && x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::PointOutsideDomain {
                point: x.iter().map(|&v| to_f64(v)).collect(),
                region: region.into(),
            })
        }
    }

    fn clamp_1d(&self, x: T) -> T {
        let l = self.cfg.dom.half_width;
        x.max(-l).min(l)
    }

    /// `K(x, y)` without the domain check.
    fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        match &self.spectral {
            None => closed_form_kernel_1d(
                &self.cfg.reg,
                self.cfg.dom.half_width,
                self.clamp_1d(x[0]),
                self.clamp_1d(y[0]),
            ),
            Some(s) => s.eval(x, y),
        }
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> Result<T> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// `K(a_i, b_j)`.
    pub fn cross_matrix(&self, a: &[Vec<T>], b: &[Vec<T>]) -> Result<DMatrix<T>> {
        for x in a.iter().chain(b) {
            self.check_point(x)?;
        }
        if let Some(s) = &self.spectral {
            return Ok(s.feature_matrix(a) * s.feature_matrix(b).transpose());
        }
        let rows: Vec<Vec<T>> = a
            .par_iter()
            .map(|x| b.iter().map(|y| self.eval_unchecked(x, y)).collect())
            .collect();
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
    }
}

pub fn kernel_eval<T: Real>(kernel: &Kernel<T>, x: &[T], y: &[T]) -> Result<T> {
    kernel.eval(x, y)
}

/// `G[i, j] = K(x_i, x_j)`, exactly symmetric.
pub fn gram_matrix<T: Real>(kernel: &Kernel<T>, points: &[Vec<T>]) -> Result<DMatrix<T>> {
    for x in points {
        kernel.check_point(x)?;
    }
    let n = points.len();
    if let Some(s) = &kernel.spectral {
        let psi = s.feature_matrix(points);
        let mut g = &psi * psi.transpose();
        mirror_upper(&mut g);
        return Ok(g);
    }
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| kernel.eval_unchecked(&points[i], &points[j])).collect())
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            g[(i, i + off)] = v;
            g[(i + off, i)] = v;
        }
    }
    Ok(g)
}

fn mirror_upper<T: Real>(g: &mut DMatrix<T>) {
    let n = g.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            g[(i, j)] = g[(j, i)];
        }
    }
}

/// Outcome of [`repair_psd`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsdRepair<T> {
    pub min_eigenvalue: T,
    pub clipped: usize,
}

/// Clips eigenvalues in `[-10⁻⁸·trace, 0)` to zero and rebuilds `g`.
/// Anything more negative signals a broken kernel and is an error.
pub fn repair_psd<T: Real>(g: &mut DMatrix<T>) -> Result<PsdRepair<T>> {
    let tol = g.trace().abs() * lit(1e-8);
    let eig = SymmetricEigen::new(g.clone());
    let min = eig.eigenvalues.iter().fold(T::zero(), |m, &v| m.min(v));
    if min < -tol {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: to_f64(min),
        });
    }
    let clipped = eig.eigenvalues.iter().filter(|&&v| v < T::zero()).count();
    if clipped > 0 {
        let vals = eig.eigenvalues.map(|v| v.max(T::zero()));
        let v = &eig.eigenvectors;
        *g = v * DMatrix::from_diagonal(&vals) * v.transpose();
        mirror_upper(g);
    }
    Ok(PsdRepair {
        min_eigenvalue: min,
        clipped,
    })
}

/// Largest violation of the weak formulation
/// `B[K(x, ·), φ] = φ(x)` over the real trigonometric test modes `φ` with
/// `‖k‖₁ ≤ test_order`.
///
/// * Closed form: `B` is taken over `Ω` (`λ∫_Ω(Kφ + K′φ′) + μ∫_Ω K′φ′`), the
///   form whose Green's function the closed form is. Integrals use a
///   composite Gauss rule split at `x` and `±L`.
/// * Spectral, `d = 1`: `B` is the periodic-box form; integrals by the same
///   composite rule on `[-2L, 2L]`, split at `x`, `±L`.
/// * Spectral, `d > 1`: integrals come from the assembled Galerkin matrix.
pub fn weak_form_residual<T: Real>(kernel: &Kernel<T>, x: &[T], test_order: u64) -> Result<T> {
    kernel.check_point(x)?;
    let dom = &kernel.cfg.dom;
    let l = dom.half_width;
    let reg = &kernel.cfg.reg;
    let tests: Vec<RealMode> = test_modes(dom.dim, test_order);
    let mut worst = T::zero();
    match &kernel.spectral {
        None => {
            let x0 = kernel.clamp_1d(x[0]);
            let rule = CompositeRule::new(-l, l, &[x0], 8, 20);
            let kv: Vec<(T, T)> = rule
                .nodes
                .iter()
                .map(|&y| {
                    (
                        closed_form_kernel_1d(reg, l, x0, y),
                        closed_form_kernel_1d_dy(reg, l, x0, y),
                    )
                })
                .collect();
            for phi in &tests {
                let mut acc = T::zero();
                for ((&y, &w), &(k, dk)) in rule.nodes.iter().zip(&rule.weights).zip(&kv) {
                    let p = phi.eval(&[y], l);
                    let dp = phi.derivative(&[1], &[y], l);
                    acc += w * (reg.lambda * (k * p + dk * dp) + reg.mu * dk * dp);
                }
                worst = worst.max((acc - phi.eval(&[x0], l)).abs());
            }
        }
        Some(s) if dom.dim == 1 => {
            let coeffs = s.expansion(x);
            let modes = s.modes();
            let order = kernel.cfg.op.order;
            let two_l = l + l;
            let panels = (modes.len() / 4).max(8);
            let box_rule = CompositeRule::new(-two_l, two_l, &[-l, x[0], l], panels, 20);
            let omega_rule = CompositeRule::new(dom.omega.lo[0], dom.omega.hi[0], &[x[0]], panels, 20);
            // ∂^a K(x, y) for a = 0..=order at box nodes, 𝒟K(x, y) at Ω nodes.
            let derivs: Vec<Vec<T>> = box_rule
                .nodes
                .par_iter()
                .map(|&y| {
                    (0..=order)
                        .map(|a| {
                            modes
                                .iter()
                                .zip(coeffs.iter())
                                .fold(T::zero(), |acc, (m, &c)| acc + c * m.derivative(&[a], &[y], l))
                        })
                        .collect()
                })
                .collect();
            let op = &kernel.cfg.op;
            let dk: Vec<T> = omega_rule
                .nodes
                .par_iter()
                .map(|&y| {
                    modes
                        .iter()
                        .zip(coeffs.iter())
                        .fold(T::zero(), |acc, (m, &c)| acc + c * op.apply_mode(m, &[y], l))
                })
                .collect();
            for phi in &tests {
                let mut sob = T::zero();
                for ((&y, &w), d) in box_rule.nodes.iter().zip(&box_rule.weights).zip(&derivs) {
                    for (a, &da) in d.iter().enumerate() {
                        sob += w * da * phi.derivative(&[a as u32], &[y], l);
                    }
                }
                let mut phys = T::zero();
                for ((&y, &w), &d) in omega_rule.nodes.iter().zip(&omega_rule.weights).zip(&dk) {
                    phys += w * d * op.apply_mode(phi, &[y], l);
                }
                let lhs = reg.lambda * sob + reg.mu * phys;
                worst = worst.max((lhs - phi.eval(x, l)).abs());
            }
        }
        Some(s) => {
            let coeffs = s.expansion(x);
            let bc = &s.system.real_b * coeffs;
            for phi in &tests {
                if let Some(r) = s.modes().iter().position(|m| m == phi) {
                    worst = worst.max((bc[r] - phi.eval(x, l)).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Constant, cosine and sine modes with `0 < ‖k‖₁ ≤ order`, one per pair
/// `±k`.
fn test_modes(dim: usize, order: u64) -> Vec<RealMode> {
    let ordering = crate::fourier::FrequencyOrdering::new(dim).expect("dim ≥ 1");
    let mut out = Vec::new();
    for radius in 0..=order {
        for k in ordering.level(radius) {
            if k.is_zero() {
                out.push(RealMode {
                    freq: k,
                    kind: ModeKind::Const,
                });
            } else if k.is_positive() {
                out.push(RealMode {
                    freq: k.clone(),
                    kind: ModeKind::Cos,
                });
                out.push(RealMode {
                    freq: k,
                    kind: ModeKind::Sin,
                });
            }
        }
    }
    out
}

/// The Neumann cosine basis `cos(kπ(x+L)/(2L))`, `k = 0..count`, on
/// `[-L, L]`. It diagonalizes the closed-form kernel's norm:
/// `λ‖f‖²_{H¹(Ω)} + μ‖f′‖²_{L²(Ω)}` has penalty
/// `‖c_k‖² (λ + (λ+μ)(kπ/2L)²)` on mode `k`, where `‖c_k‖² = 2L` for
/// `k = 0` and `L` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannCosineBasis<T> {
    pub half_width: T,
    pub count: usize,
}

impl<T: Real> NeumannCosineBasis<T> {
    pub fn new(half_width: T, count: usize) -> Self {
        Self { half_width, count }
    }

    pub fn frequency(&self, k: usize) -> T {
        from_usize::<T>(k) * T::PI() / (self.half_width + self.half_width)
    }

    /// `∫_Ω c_k²`.
    pub fn norm_sqr(&self, k: usize) -> T {
        if k == 0 {
            self.half_width + self.half_width
        } else {
            self.half_width
        }
    }

    /// Diagonal penalty `‖c_k‖² (λ + (λ+μ) ω_k²)`.
    pub fn penalty(&self, reg: &RegularizationParams<T>) -> Vec<T> {
        (0..self.count)
            .map(|k| {
                let w = self.frequency(k);
                self.norm_sqr(k) * (reg.lambda + (reg.lambda + reg.mu) * w * w)
            })
            .collect()
    }

    /// `(c_0(x), …, c_{count−1}(x))` by the Chebyshev recurrence.
    pub fn values(&self, x: T) -> Vec<T> {
        let theta = (x + self.half_width) * self.frequency(1);
        let two_c = lit::<T>(2.0) * theta.cos();
        let mut out = Vec::with_capacity(self.count);
        let (mut prev, mut cur) = (theta.cos(), T::one());
        for _ in 0..self.count {
            out.push(cur);
            let next = two_c * cur - prev;
            prev = cur;
            cur = next;
        }
        out
    }

    /// Mercer expansion of the closed-form kernel truncated to `count` terms.
    pub fn kernel(&self, reg: &RegularizationParams<T>, x: T, y: T) -> T {
        let (cx, cy) = (self.values(x), self.values(y));
        self.penalty(reg)
            .iter()
            .zip(cx.iter().zip(&cy))
            .fold(T::zero(), |acc, (&p, (&a, &b))| acc + a * b / p)
    }
}

/// All `(x_i, y_j, K(x_i, y_j))` on a uniform `grid × grid` lattice of
/// `[lo, hi]²`, rows in `x`-major order.
pub fn kernel_grid<T: Real>(kernel: &Kernel<T>, lo: T, hi: T, grid: usize) -> Result<Vec<(T, T, T)>> {
    if grid < 2 {
        return Err(Error::invalid("grid", "must be at least 2"));
    }
    let step = (hi - lo) / from_usize::<T>(grid - 1);
    let pts: Vec<Vec<T>> = (0..grid)
        .map(|i| vec![if i + 1 == grid { hi } else { lo + step * from_usize::<T>(i) }])
        .collect();
    let k = kernel.cross_matrix(&pts, &pts)?;
    let mut out = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            out.push((pts[i][0], pts[j][0], k[(i, j)]));
        }
    }
    Ok(out)
}

/// Sobolev multi-indices used by the norm (re-exported for callers that
/// evaluate `‖f‖²_{Hˢ}` by quadrature).
pub fn sobolev_multi_indices(dim: usize, order: u32) -> Vec<Vec<u32>> {
    multi_indices(dim, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::sobolev_weight;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reg(lambda: f64, mu: f64) -> RegularizationParams<f64> {
        RegularizationParams::new(lambda, mu).unwrap()
    }

    /// Oracle: second-order finite differences for λf − (λ+μ)f″ = δ_x with
    /// Neumann ends (ghost-point reflection), on `n` cells.
    fn fd_green(lambda: f64, mu: f64, l: f64, x: f64, n: usize) -> Vec<(f64, f64)> {
        let h = 2.0 * l / n as f64;
        let m = n + 1;
        let c = (lambda + mu) / (h * h);
        // Tridiagonal system, Thomas algorithm.
        let mut a = vec![-c; m];
        let mut b = vec![lambda + 2.0 * c; m];
        let mut cc = vec![-c; m];
        cc[0] = -2.0 * c;
        a[m - 1] = -2.0 * c;
        let mut d = vec![0.0; m];
        // Delta split linearly between the two nearest nodes.
        let pos = (x + l) / h;
        let i0 = (pos.floor() as usize).min(n - 1);
        let t = pos - i0 as f64;
        d[i0] += (1.0 - t) / h;
        d[i0 + 1] += t / h;
        // End nodes carry half cells in the trapezoid sense.
        for i in [0, m - 1] {
            if d[i] != 0.0 {
                d[i] *= 2.0;
            }
        }
        for i in 1..m {
            let w = a[i] / b[i - 1];
            b[i] -= w * cc[i - 1];
            d[i] -= w * d[i - 1];
        }
        let mut f = vec![0.0; m];
        f[m - 1] = d[m - 1] / b[m - 1];
        for i in (0..m - 1).rev() {
            f[i] = (d[i] - cc[i] * f[i + 1]) / b[i];
        }
        (0..m).map(|i| (-l + h * i as f64, f[i])).collect()
    }

    #[test]
    fn unit_setting_diagonal_value() {
        let r = reg(1.0, 1.0);
        let g = 0.5f64.sqrt();
        let want = g * ((2.0 * g).cosh() + 1.0) / (2.0 * (2.0 * g).sinh());
        let got = closed_form_kernel_1d(&r, 1.0, 0.0, 0.0);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.5807).abs() < 1e-4);
        let fd = fd_green(1.0, 1.0, 1.0, 0.0, 10_000);
        let mid = fd[5000];
        assert!((mid.1 - got).abs() < 1e-6);
    }

    #[test]
    fn closed_form_matches_finite_differences() {
        let r = reg(0.3, 1.7);
        for &x in &[-1.0, -0.45, 0.2, 0.9] {
            let fd = fd_green(0.3, 1.7, 1.0, x, 4000);
            for &(y, f) in fd.iter().step_by(97) {
                assert!((closed_form_kernel_1d(&r, 1.0, x, y) - f).abs() < 1e-4, "x={x} y={y}");
            }
        }
    }

    #[test]
    fn log_space_branch_agrees_with_verbatim_formula() {
        for (lambda, mu, l) in [(1.0, 0.0, 1.0), (0.3, 0.1, 4.0), (2.0, 1.0, 4.5)] {
            let r = reg(lambda, mu);
            for &(x, y) in &[(0.3, 0.9), (-0.99 * l, 0.5 * l), (0.7 * l, 0.7 * l), (-l, l)] {
                let a = closed_form_verbatim(&r, l, x, y);
                let b = closed_form_log_space(&r, l, x, y);
                assert!((a - b).abs() <= 1e-12 * r.gamma() / r.lambda, "{a} {b}");
            }
        }
        // Far past overflow of cosh, and at the switch.
        let k = closed_form_kernel_1d(&reg(1.0, 0.0), 1000.0, 999.0, 999.0);
        assert!(k.is_finite() && k > 0.0 && k <= 1.0);
        let r = reg(1.0, 0.0);
        let below = closed_form_kernel_1d(&r, 4.0 - 1e-12, 0.1, 0.2);
        let above = closed_form_kernel_1d(&r, 4.0 + 1e-12, 0.1, 0.2);
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let r = reg(0.2, 0.9);
        let h = 1e-6;
        for &(x, y) in &[(0.3, -0.5), (0.3, 0.7), (-0.9, 0.1)] {
            let fd = (closed_form_kernel_1d(&r, 1.0, x, y + h) - closed_form_kernel_1d(&r, 1.0, x, y - h)) / (2.0 * h);
            assert!((closed_form_kernel_1d_dy(&r, 1.0, x, y) - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn symmetric_and_bounded() {
        let r = reg(0.05, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (x, y) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            let (a, b) = (closed_form_kernel_1d(&r, 1.0, x, y), closed_form_kernel_1d(&r, 1.0, y, x));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            assert!(closed_form_kernel_1d(&r, 1.0, x, x) <= 1.0 / r.lambda);
        }
    }

    #[test]
    fn closed_form_weak_form() {
        let cfg = KernelConfig::closed_form_1d(reg(1.0, 1.0), 1.0).unwrap();
        let k = Kernel::new(cfg).unwrap();
        assert!(weak_form_residual(&k, &[0.3], 10).unwrap() < 1e-6);
        // Constant test function: λ∫K(x,·) = 1.
        let rule = CompositeRule::new(-1.0, 1.0, &[0.3], 8, 20);
        let mass = rule.integrate(|y| closed_form_kernel_1d(&reg(1.0, 1.0), 1.0, 0.3, y));
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_weak_form_and_convergence() {
        let op = MultiIndexOperator::derivative_1d();
        let dom = DomainSpec::interval(1.0).unwrap();
        let mut prev = f64::INFINITY;
        for n in [64, 128, 256] {
            let k = Kernel::new(KernelConfig::new(op.clone(), reg(1.0, 1.0), dom.clone(), Backend::Spectral { n_max: n }).unwrap()).unwrap();
            let r = weak_form_residual(&k, &[0.3], 10).unwrap();
            assert!(r < 1e-8, "n={n} r={r}");
            assert!(r <= prev.max(1e-10));
            prev = r;
        }
    }

    #[test]
    fn gram_properties() {
        let k = Kernel::new(KernelConfig::closed_form_1d(reg(1.0, 1.0), 1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-1.0..=1.0)]).collect();
        let g = gram_matrix(&k, &pts).unwrap();
        let min = SymmetricEigen::new(g.clone()).eigenvalues.min();
        assert!(min >= -1e-8);
        assert_eq!(g, g.transpose());
        let single = gram_matrix(&k, &pts[..1]).unwrap();
        assert_eq!(single[(0, 0)], k.eval(&pts[0], &pts[0]).unwrap());
        pts.push(pts[3].clone());
        let g = gram_matrix(&k, &pts).unwrap();
        assert_eq!(g.row(3), g.row(50));
    }

    #[test]
    fn rejects_points_and_configs() {
        let k = Kernel::new(KernelConfig::closed_form_1d(reg(1.0, 1.0), 1.0).unwrap()).unwrap();
        assert!(matches!(k.eval(&[1.5], &[0.0]), Err(Error::PointOutsideDomain { .. })));
        let lap = MultiIndexOperator::laplacian(1).unwrap();
        assert!(KernelConfig::new(lap, reg(1.0, 1.0), DomainSpec::interval(1.0).unwrap(), Backend::ClosedForm1d).is_err());
        let full = DomainSpec::full_box(1, 1.0).unwrap();
        assert!(KernelConfig::new(MultiIndexOperator::derivative_1d(), reg(1.0, 1.0), full, Backend::ClosedForm1d).is_err());
    }

    #[test]
    fn psd_repair_clips_roundoff_and_rejects_real_negatives() {
        let v = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, -0.8, 0.6]);
        let mut g = &v * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-12])) * v.transpose();
        let rep = repair_psd(&mut g).unwrap();
        assert_eq!(rep.clipped, 1);
        assert!(SymmetricEigen::new(g.clone()).eigenvalues.min() >= -1e-15);
        let mut bad = &v * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3])) * v.transpose();
        assert!(matches!(repair_psd(&mut bad), Err(Error::NotPositiveDefinite { .. })));
    }

    // Reproducing property and norm identity in the truncated basis, with
    // the norm evaluated by quadrature rather than by the Galerkin matrix.
    #[test]
    fn spectral_reproducing_property_and_norm_identity() {
        let op = MultiIndexOperator::derivative_1d();
        let r = reg(0.4, 1.3);
        let dom = DomainSpec::interval(1.0).unwrap();
        let k = Kernel::new(KernelConfig::new(op.clone(), r, dom, Backend::Spectral { n_max: 33 }).unwrap()).unwrap();
        let s = k.spectral().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = DVector::from_fn(s.modes().len(), |_, _| rng.random_range(-1.0..1.0));
        let f = |y: f64| s.modes().iter().zip(theta.iter()).map(|(m, t)| t * m.eval(&[y], 1.0)).sum::<f64>();
        let df = |y: f64| s.modes().iter().zip(theta.iter()).map(|(m, t)| t * m.derivative(&[1], &[y], 1.0)).sum::<f64>();
        for &x in &[-1.7, -0.2, 0.55] {
            let inner = theta.dot(&(&s.system.real_b * s.expansion(&[x])));
            assert!((inner - f(x)).abs() <= 1e-8 * f(x).abs().max(1.0));
        }
        let box_rule = CompositeRule::new(-2.0, 2.0, &[], 32, 20);
        let om_rule = CompositeRule::new(-1.0, 1.0, &[], 32, 20);
        let want = r.lambda * box_rule.integrate(|y| f(y) * f(y) + df(y) * df(y)) + r.mu * om_rule.integrate(|y| df(y) * df(y));
        let got = s.rkhs_norm_sqr(&theta);
        assert!((got - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn spectral_diagonal_kernel_matches_fourier_sum() {
        // Full box, constant coefficients: K(x,y) = Σ_k cos(ω k (x−y)) a_k / (4L).
        let op = MultiIndexOperator::derivative_1d();
        let r = reg(0.5, 0.5);
        let dom = DomainSpec::full_box(1, 1.0).unwrap();
        let k = Kernel::new(KernelConfig::new(op.clone(), r, dom, Backend::Spectral { n_max: 41 }).unwrap()).unwrap();
        let (x, y) = (0.3, -1.1);
        let omega = std::f64::consts::PI / 2.0;
        let want: f64 = (-20i64..=20)
            .map(|j| {
                let f = crate::fourier::Frequency(vec![j]);
                let a = crate::operator::spectral_eigenvalue(&f, &op, &r, 1.0).unwrap();
                assert!((1.0 / a - r.lambda * sobolev_weight(&f, 1, 1.0) - r.mu * (omega * j as f64).powi(2)).abs() < 1e-9);
                a * (omega * j as f64 * (x - y)).cos() / 4.0
            })
            .sum();
        assert!((k.eval(&[x], &[y]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn neumann_expansion_converges_to_closed_form() {
        let r = reg(1.0, 1.0);
        let basis = NeumannCosineBasis::new(1.0, 4096);
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.6), (1.0, 1.0), (-0.8, 0.5)] {
            let exact = closed_form_kernel_1d(&r, 1.0, x, y);
            assert!((basis.kernel(&r, x, y) - exact).abs() < 1e-4);
        }
        let c = basis.values(0.37);
        for k in [0usize, 1, 7, 100] {
            assert!((c[k] - (basis.frequency(k) * (0.37 + 1.0)).cos()).abs() < 1e-10);
        }
    }
}
