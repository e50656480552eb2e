//! The physics-informed estimator
//!
//! ```text
//! f̂ = argmin (1/n) Σ_i |f(X_i) − Y_i|² + λ‖f‖²_{Hˢ} + μ‖𝒟f‖²_{L²(Ω)}
//! ```
//!
//! fitted through its kernel form. By the representer theorem
//! `f̂ = Σ_i c_i K(X_i, ·)` with `(G + nI) c = Y`: the objective restricted to
//! the span is `(1/n)‖Gc − Y‖² + cᵀGc`, whose gradient vanishes there.
//!
//! For large `n` a low-rank solver writes `f̂ = Σ_k θ_k φ_k` in a finite
//! basis and solves `(ΦᵀΦ/n + S) θ = ΦᵀY/n`, with `S` the penalty matrix of
//! the basis.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::DomainSpec;
use crate::kernel::{
    closed_form_kernel_1d_dy, gram_matrix, repair_psd, Backend, Kernel, KernelConfig, NeumannCosineBasis,
};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Above this many samples [`Solver::Auto`] switches to the low-rank solver.
pub const LOW_RANK_THRESHOLD: usize = 3000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub xs: Vec<Vec<T>>,
    pub ys: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(xs: Vec<Vec<T>>, ys: Vec<T>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::invalid("data", "needs at least one sample"));
        }
        if xs.len() != ys.len() {
            return Err(Error::invalid(
                "data",
                format!("{} points but {} targets", xs.len(), ys.len()),
            ));
        }
        let dim = xs[0].len();
        if dim == 0 || xs.iter().any(|x| x.len() != dim) {
            return Err(Error::invalid("data", "points must share a positive dimension"));
        }
        if xs.iter().flatten().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::invalid("data", "values must be finite"));
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    /// Errors on the first point outside Ω.
    pub fn check_in(&self, dom: &DomainSpec<T>) -> Result<()> {
        match self.xs.iter().find(|x| !dom.in_omega(x)) {
            None => Ok(()),
            Some(x) => Err(Error::PointOutsideDomain {
                point: x.iter().map(|&v| to_f64(v)).collect(),
                region: "Ω".into(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Dual solve up to [`LOW_RANK_THRESHOLD`] samples, low rank above.
    Auto,
    Dual,
    /// Low-rank solve with an optional basis size (default: automatic).
    LowRank { basis_size: Option<usize> },
}

/// Finite basis of a low-rank model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowRankBasis<T> {
    /// Neumann cosines on Ω (closed-form backend).
    NeumannCosine(NeumannCosineBasis<T>),
    /// The real Galerkin modes of the spectral kernel.
    Galerkin { modes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation<T> {
    /// `f̂ = Σ_i c_i K(x_i, ·)`.
    Dual { xs: Vec<Vec<T>>, coeffs: Vec<T> },
    /// `f̂ = Σ_k θ_k φ_k`.
    LowRank { basis: LowRankBasis<T>, theta: Vec<T> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `‖A z − b‖` of the final linear solve.
    pub solver_residual: f64,
    /// `‖b‖` of the same solve, for relative comparisons.
    pub rhs_norm: f64,
    /// `(max L_ii / min L_ii)²` of the Cholesky factor.
    pub condition_estimate: f64,
    /// Most negative Gram eigenvalue when a PSD repair was needed.
    pub psd_repair_min_eigenvalue: Option<f64>,
    pub basis_size: usize,
}

#[derive(Clone, Debug)]
pub struct KernelModel<T: Real> {
    pub kernel: Kernel<T>,
    pub representation: Representation<T>,
    pub diagnostics: FitDiagnostics,
}

/// Serializable form of a [`KernelModel`]; the kernel is rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile<T> {
    pub cfg: KernelConfig<T>,
    pub representation: Representation<T>,
    pub diagnostics: FitDiagnostics,
}

impl<T: Real> KernelModel<T> {
    pub fn to_file(&self) -> ModelFile<T> {
        ModelFile {
            cfg: self.kernel.cfg.clone(),
            representation: self.representation.clone(),
            diagnostics: self.diagnostics,
        }
    }

    pub fn from_file(file: ModelFile<T>) -> Result<Self> {
        let kernel = Kernel::new(KernelConfig::new(file.cfg.op, file.cfg.reg, file.cfg.dom, file.cfg.backend)?)?;
        match &file.representation {
            Representation::Dual { xs, coeffs } => {
                if xs.len() != coeffs.len() {
                    return Err(Error::Parse("model has mismatched points and coefficients".into()));
                }
            }
            Representation::LowRank { basis, theta } => {
                let want = match basis {
                    LowRankBasis::NeumannCosine(b) => b.count,
                    LowRankBasis::Galerkin { modes } => *modes,
                };
                if theta.len() != want {
                    return Err(Error::Parse("model basis size does not match its coefficients".into()));
                }
            }
        }
        Ok(Self {
            kernel,
            representation: file.representation,
            diagnostics: file.diagnostics,
        })
    }

    /// Dual coefficients, when the model has them.
    pub fn dual_coeffs(&self) -> Option<&[T]> {
        match &self.representation {
            Representation::Dual { coeffs, .. } => Some(coeffs),
            Representation::LowRank { .. } => None,
        }
    }

    pub fn predict(&self, x: &[T]) -> Result<T> {
        Ok(self.predict_many(std::slice::from_ref(&x.to_vec()))?[0])
    }

    pub fn predict_many(&self, points: &[Vec<T>]) -> Result<Vec<T>> {
        for x in points {
            self.kernel.check_point(x)?;
        }
        match &self.representation {
            Representation::Dual { xs, coeffs } => {
                let k = self.kernel.cross_matrix(points, xs)?;
                Ok((k * DVector::from_column_slice(coeffs)).iter().copied().collect())
            }
            Representation::LowRank { basis, theta } => {
                let phi = basis_matrix(&self.kernel, basis, points);
                Ok((phi * DVector::from_column_slice(theta)).iter().copied().collect())
            }
        }
    }
}

impl<T: Real> KernelModel<T> {
    /// Values of `𝒟f̂` at the given points.
    pub fn operator_values(&self, points: &[Vec<T>]) -> Result<Vec<T>> {
        for x in points {
            self.kernel.check_point(x)?;
        }
        let cfg = &self.kernel.cfg;
        let modal = |theta: &DVector<T>, x: &[T]| {
            let s = self.kernel.spectral().expect("modal representation needs the spectral backend");
            s.modes()
                .iter()
                .zip(theta.iter())
                .fold(T::zero(), |acc, (m, &t)| acc + t * cfg.op.apply_mode(m, x, s.half_width()))
        };
        Ok(match &self.representation {
            Representation::Dual { xs, coeffs } => match self.kernel.spectral() {
                None => points
                    .iter()
                    .map(|y| {
                        xs.iter().zip(coeffs).fold(T::zero(), |acc, (x, &c)| {
                            acc + c * closed_form_kernel_1d_dy(&cfg.reg, cfg.dom.half_width, x[0], y[0])
                        })
                    })
                    .collect(),
                Some(s) => {
                    let theta = xs
                        .iter()
                        .zip(coeffs)
                        .fold(DVector::zeros(s.modes().len()), |acc, (x, &c)| acc + s.expansion(x) * c);
                    points.iter().map(|y| modal(&theta, y)).collect()
                }
            },
            Representation::LowRank { basis, theta } => match basis {
                LowRankBasis::NeumannCosine(b) => points
                    .iter()
                    .map(|y| {
                        theta.iter().enumerate().fold(T::zero(), |acc, (k, &t)| {
                            let w = b.frequency(k);
                            acc - t * w * (w * (y[0] + b.half_width)).sin()
                        })
                    })
                    .collect(),
                LowRankBasis::Galerkin { .. } => {
                    let theta = DVector::from_column_slice(theta);
                    points.iter().map(|y| modal(&theta, y)).collect()
                }
            },
        })
    }
}

fn basis_matrix<T: Real>(kernel: &Kernel<T>, basis: &LowRankBasis<T>, points: &[Vec<T>]) -> DMatrix<T> {
    match basis {
        LowRankBasis::NeumannCosine(b) => {
            let rows: Vec<Vec<T>> = points.iter().map(|x| b.values(x[0])).collect();
            DMatrix::from_fn(points.len(), b.count, |i, k| rows[i][k])
        }
        LowRankBasis::Galerkin { .. } => kernel
            .spectral()
            .expect("Galerkin basis requires the spectral backend")
            .basis_matrix(points),
    }
}

pub fn fit<T: Real>(kernel: &Kernel<T>, data: &Dataset<T>) -> Result<KernelModel<T>> {
    fit_with(kernel, data, Solver::Auto)
}

pub fn fit_with<T: Real>(kernel: &Kernel<T>, data: &Dataset<T>, solver: Solver) -> Result<KernelModel<T>> {
    if data.dim() != kernel.dim() {
        return Err(Error::invalid("data", "point dimension differs from the kernel's"));
    }
    data.check_in(&kernel.cfg.dom)?;
    match solver {
        Solver::Dual => fit_dual(kernel, data),
        Solver::LowRank { basis_size } => fit_low_rank(kernel, data, basis_size),
        Solver::Auto if data.len() > LOW_RANK_THRESHOLD => fit_low_rank(kernel, data, None),
        Solver::Auto => fit_dual(kernel, data),
    }
}

/// Solves `A z = b` by Cholesky with one step of iterative refinement when
/// the residual exceeds `10⁻¹⁰‖b‖`.
fn spd_solve<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Option<(DVector<T>, FitDiagnostics)> {
    let chol = a.clone().cholesky()?;
    let mut z = chol.solve(b);
    let mut r = b - a * &z;
    let bn = b.norm();
    if r.norm() > lit::<T>(1e-10) * bn {
        z += chol.solve(&r);
        r = b - a * &z;
    }
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(to_f64(d)), hi.max(to_f64(d))));
    Some((
        z,
        FitDiagnostics {
            solver_residual: to_f64(r.norm()),
            rhs_norm: to_f64(bn),
            condition_estimate: (hi / lo).powi(2),
            psd_repair_min_eigenvalue: None,
            basis_size: a.nrows(),
        },
    ))
}

fn fit_dual<T: Real>(kernel: &Kernel<T>, data: &Dataset<T>) -> Result<KernelModel<T>> {
    let n = data.len();
    let mut g = gram_matrix(kernel, &data.xs)?;
    let y = DVector::from_column_slice(&data.ys);
    let shift = from_usize::<T>(n);
    let shifted = |g: &DMatrix<T>| {
        let mut a = g.clone();
        for i in 0..n {
            a[(i, i)] += shift;
        }
        a
    };
    let (c, diagnostics) = match spd_solve(&shifted(&g), &y) {
        Some(ok) => ok,
        None => {
            let repair = repair_psd(&mut g)?;
            let (c, mut d) = spd_solve(&shifted(&g), &y).ok_or(Error::NotPositiveDefinite {
                min_eigenvalue: to_f64(repair.min_eigenvalue),
            })?;
            d.psd_repair_min_eigenvalue = Some(to_f64(repair.min_eigenvalue));
            (c, d)
        }
    };
    Ok(KernelModel {
        kernel: kernel.clone(),
        representation: Representation::Dual {
            xs: data.xs.clone(),
            coeffs: c.iter().copied().collect(),
        },
        diagnostics,
    })
}

/// Basis size for the Neumann low-rank solver: the smallest `N` with
/// `n κ a_N ≤ 10⁻²`, where `a_k = 1/(λ + (λ+μ) ω_k²)` are the kernel's
/// Mercer eigenvalues on `L²(Ω)`, clamped to `[64, 4096]`.
pub fn neumann_basis_size<T: Real>(cfg: &KernelConfig<T>, n: usize) -> usize {
    let probe = NeumannCosineBasis::new(cfg.dom.half_width, 0);
    let scale = from_usize::<T>(n) * cfg.dom.kappa;
    let target = lit::<T>(1e-2);
    let mut k = 64;
    while k < 4096 {
        let w = probe.frequency(k);
        let a = T::one() / (cfg.reg.lambda + (cfg.reg.lambda + cfg.reg.mu) * w * w);
        if scale * a <= target {
            break;
        }
        k += 1;
    }
    k
}

fn fit_low_rank<T: Real>(kernel: &Kernel<T>, data: &Dataset<T>, basis_size: Option<usize>) -> Result<KernelModel<T>> {
    let n = data.len();
    let nf = from_usize::<T>(n);
    let (basis, gram, rhs, penalty) = match kernel.cfg.backend {
        Backend::ClosedForm1d => {
            let count = basis_size.unwrap_or_else(|| neumann_basis_size(&kernel.cfg, n));
            if count == 0 {
                return Err(Error::invalid("basis_size", "must be at least 1"));
            }
            let b = NeumannCosineBasis::new(kernel.cfg.dom.half_width, count);
            let (gram, rhs) = cosine_normal_equations(&b, data);
            let penalty = DMatrix::from_diagonal(&DVector::from_vec(b.penalty(&kernel.cfg.reg)));
            (LowRankBasis::NeumannCosine(b), gram, rhs, penalty)
        }
        Backend::Spectral { .. } => {
            let s = kernel.spectral().expect("spectral backend keeps its system");
            if basis_size.is_some_and(|m| m != s.modes().len()) {
                return Err(Error::invalid(
                    "basis_size",
                    "the spectral low-rank basis is the kernel's own truncation (set n_max instead)",
                ));
            }
            let phi = s.basis_matrix(&data.xs);
            let gram = phi.transpose() * &phi;
            let rhs = phi.transpose() * DVector::from_column_slice(&data.ys);
            (
                LowRankBasis::Galerkin { modes: s.modes().len() },
                gram,
                rhs,
                s.system.real_b.clone(),
            )
        }
    };
    let a = gram / nf + penalty;
    let b = rhs / nf;
    let (theta, diagnostics) = spd_solve(&a, &b).ok_or_else(|| Error::EigenSolver {
        reason: "low-rank normal equations are not positive definite".into(),
        condition: f64::INFINITY,
    })?;
    Ok(KernelModel {
        kernel: kernel.clone(),
        representation: Representation::LowRank {
            basis,
            theta: theta.iter().copied().collect(),
        },
        diagnostics,
    })
}

/// `ΦᵀΦ` and `ΦᵀY` for the cosine basis from trigonometric moments:
/// `cos jθ cos kθ = ½(cos(j+k)θ + cos(j−k)θ)`, so
/// `(ΦᵀΦ)_{jk} = ½(C_{j+k} + C_{|j−k|})` with `C_m = Σ_i cos(mθ_i)`.
/// Cost `O(nN + N²)` instead of `O(nN²)`.
fn cosine_normal_equations<T: Real>(basis: &NeumannCosineBasis<T>, data: &Dataset<T>) -> (DMatrix<T>, DVector<T>) {
    let count = basis.count;
    let moments = 2 * count - 1;
    let mut c = vec![T::zero(); moments];
    let mut r = vec![T::zero(); count];
    let two = lit::<T>(2.0);
    let w1 = basis.frequency(1);
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let theta = (x[0] + basis.half_width) * w1;
        let two_cos = two * theta.cos();
        // Chebyshev recurrence cos((m+1)θ) = 2cosθ cos(mθ) − cos((m−1)θ),
        // restarted from exact values every 256 steps to bound drift.
        let (mut prev, mut cur) = (theta.cos(), T::one());
        for (m, cm) in c.iter_mut().enumerate() {
            if m > 0 && m % 256 == 0 {
                let mf = from_usize::<T>(m);
                cur = (mf * theta).cos();
                prev = ((mf - T::one()) * theta).cos();
            }
            *cm += cur;
            if m < count {
                r[m] += y * cur;
            }
            let next = two_cos * cur - prev;
            prev = cur;
            cur = next;
        }
    }
    let half = lit::<T>(0.5);
    let gram = DMatrix::from_fn(count, count, |j, k| half * (c[j + k] + c[j.abs_diff(k)]));
    (gram, DVector::from_vec(r))
}

/// `(1/n)‖Gc − Y‖² + cᵀGc`, the empirical risk restricted to the span of
/// the kernel sections.
pub fn dual_objective<T: Real>(g: &DMatrix<T>, c: &DVector<T>, y: &DVector<T>) -> T {
    let gc = g * c;
    let n = from_usize::<T>(y.len());
    (&gc - y).norm_squared() / n + c.dot(&gc)
}

/// Points drawn uniformly from Ω.
pub fn sample_uniform<T: Real, R: Rng>(dom: &DomainSpec<T>, count: usize, rng: &mut R) -> Vec<Vec<T>> {
    (0..count)
        .map(|_| {
            dom.omega
                .lo
                .iter()
                .zip(&dom.omega.hi)
                .map(|(&a, &b)| {
                    let u: f64 = rng.random();
                    a + (b - a) * lit::<T>(u)
                })
                .collect()
        })
        .collect()
}

/// Monte Carlo estimate `(1/m) Σ_j |f̂(U_j) − f*(U_j)|²` with `U_j` uniform
/// on Ω, drawn from a ChaCha8 stream seeded with `seed`.
pub fn l2_error<T: Real>(
    model: &KernelModel<T>,
    target: &(dyn Fn(&[T]) -> T + Sync),
    dom: &DomainSpec<T>,
    n_eval: usize,
    seed: u64,
) -> Result<T> {
    if n_eval == 0 {
        return Err(Error::invalid("n_eval", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_uniform(dom, n_eval, &mut rng);
    squared_error_on(model, target, &pts)
}

/// Mean of `|f̂(u) − f*(u)|²` over the given evaluation points.
pub fn squared_error_on<T: Real>(
    model: &KernelModel<T>,
    target: &(dyn Fn(&[T]) -> T + Sync),
    points: &[Vec<T>],
) -> Result<T> {
    if points.is_empty() {
        return Err(Error::invalid("n_eval", "must be at least 1"));
    }
    let pred = model.predict_many(points)?;
    let sum = points
        .iter()
        .zip(&pred)
        .fold(T::zero(), |acc, (x, &p)| acc + (p - target(x)).powi(2));
    Ok(sum / from_usize::<T>(points.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effdim::speedup_schedule;
    use crate::kernel::closed_form_kernel_1d;
    use crate::operator::{MultiIndexOperator, RegularizationParams};
    use crate::quadrature::CompositeRule;
    use rand_distr::{Distribution, Normal};

    fn reg(lambda: f64, mu: f64) -> RegularizationParams<f64> {
        RegularizationParams::new(lambda, mu).unwrap()
    }

    fn closed(lambda: f64, mu: f64) -> Kernel<f64> {
        Kernel::new(KernelConfig::closed_form_1d(reg(lambda, mu), 1.0).unwrap()).unwrap()
    }

    fn spectral(lambda: f64, mu: f64, n_max: usize) -> Kernel<f64> {
        let cfg = KernelConfig::new(
            MultiIndexOperator::derivative_1d(),
            reg(lambda, mu),
            DomainSpec::interval(1.0).unwrap(),
            Backend::Spectral { n_max },
        )
        .unwrap();
        Kernel::new(cfg).unwrap()
    }

    fn noisy(n: usize, seed: u64, f: impl Fn(f64) -> f64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dom = DomainSpec::interval(1.0).unwrap();
        let xs = sample_uniform(&dom, n, &mut rng);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let ys = xs.iter().map(|x| f(x[0]) + normal.sample(&mut rng)).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn single_point_closed_form() {
        let k = closed(0.7, 0.4);
        let (x0, y) = (0.25, 1.9);
        let g = k.eval(&[x0], &[x0]).unwrap();
        let model = fit(&k, &Dataset::new(vec![vec![x0]], vec![y]).unwrap()).unwrap();
        let c = model.dual_coeffs().unwrap()[0];
        assert!((c - y / (g + 1.0)).abs() < 1e-12);
        assert!((model.predict(&[x0]).unwrap() - g * y / (g + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_and_zero_model() {
        let k = closed(0.1, 1.0);
        let data = Dataset::new(vec![vec![0.3], vec![0.3], vec![-0.5]], vec![1.0, 2.0, 0.0]).unwrap();
        let model = fit(&k, &data).unwrap();
        for x in [-1.0, 0.0, 0.3, 1.0] {
            assert!(model.predict(&[x]).unwrap().is_finite());
        }
        let zero = KernelModel {
            representation: Representation::Dual {
                xs: data.xs.clone(),
                coeffs: vec![0.0; 3],
            },
            ..model
        };
        assert_eq!(zero.predict(&[0.1]).unwrap(), 0.0);
    }

    #[test]
    fn linear_in_targets() {
        let k = closed(0.05, 0.5);
        let data = noisy(40, 1, |x| x * x);
        let doubled = Dataset::new(data.xs.clone(), data.ys.iter().map(|y| 2.0 * y).collect()).unwrap();
        let (a, b) = (fit(&k, &data).unwrap(), fit(&k, &doubled).unwrap());
        for x in [-0.9, 0.1, 0.77] {
            assert!((2.0 * a.predict(&[x]).unwrap() - b.predict(&[x]).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_is_recovered() {
        let n = 200;
        let r = speedup_schedule(n, 0.0).unwrap();
        let k = Kernel::new(KernelConfig::closed_form_1d(r, 1.0).unwrap()).unwrap();
        let model = fit(&k, &noisy(n, 0, |_| 1.0)).unwrap();
        let grid: Vec<Vec<f64>> = (0..101).map(|i| vec![-1.0 + 0.02 * i as f64]).collect();
        let mean = model.predict_many(&grid).unwrap().iter().sum::<f64>() / 101.0;
        assert!((mean - 1.0).abs() < 0.15, "mean {mean}");
        let d = model.diagnostics;
        assert!(d.solver_residual <= 1e-8 * d.rhs_norm);
    }

    #[test]
    fn objective_is_minimal() {
        let k = closed(0.02, 0.3);
        let data = noisy(60, 4, |x| (3.0 * x).sin());
        let model = fit(&k, &data).unwrap();
        let g = gram_matrix(&k, &data.xs).unwrap();
        let c = DVector::from_column_slice(model.dual_coeffs().unwrap());
        let y = DVector::from_column_slice(&data.ys);
        let best = dual_objective(&g, &c, &y);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let delta = DVector::from_fn(c.len(), |_, _| rng.random_range(-1e-3..1e-3));
            assert!(dual_objective(&g, &(&c + delta), &y) >= best - 1e-9);
        }
    }

    #[test]
    fn rkhs_norm_accounting_closed_form() {
        // cᵀGc = λ∫_Ω (f̂² + f̂′²) + μ∫_Ω f̂′², by quadrature split at the
        // kernel kinks.
        let r = reg(0.05, 0.8);
        let k = closed(r.lambda, r.mu);
        let data = noisy(15, 2, |x| x.abs());
        let model = fit(&k, &data).unwrap();
        let c = model.dual_coeffs().unwrap();
        let kinks: Vec<f64> = data.xs.iter().map(|x| x[0]).collect();
        let rule = CompositeRule::new(-1.0, 1.0, &kinks, 4, 20);
        let f = |y: f64| data.xs.iter().zip(c).map(|(x, ci)| ci * closed_form_kernel_1d(&r, 1.0, x[0], y)).sum::<f64>();
        let df = |y: f64| data.xs.iter().zip(c).map(|(x, ci)| ci * closed_form_kernel_1d_dy(&r, 1.0, x[0], y)).sum::<f64>();
        let norm = r.lambda * rule.integrate(|y| f(y).powi(2) + df(y).powi(2)) + r.mu * rule.integrate(|y| df(y).powi(2));
        let g = gram_matrix(&k, &data.xs).unwrap();
        let cv = DVector::from_column_slice(c);
        let ctgc = cv.dot(&(&g * &cv));
        assert!((norm - ctgc).abs() <= 1e-4 * ctgc, "{norm} vs {ctgc}");
    }

    #[test]
    fn rkhs_norm_accounting_spectral() {
        let r = reg(0.05, 0.8);
        let k = spectral(r.lambda, r.mu, 65);
        let s = k.spectral().unwrap();
        let data = noisy(15, 2, |x| x.abs());
        let model = fit(&k, &data).unwrap();
        let c = model.dual_coeffs().unwrap();
        let theta = data
            .xs
            .iter()
            .zip(c)
            .fold(DVector::zeros(s.modes().len()), |acc, (x, ci)| acc + s.expansion(x) * *ci);
        let f = |y: f64| s.modes().iter().zip(theta.iter()).map(|(m, t)| t * m.eval(&[y], 1.0)).sum::<f64>();
        let df = |y: f64| s.modes().iter().zip(theta.iter()).map(|(m, t)| t * m.derivative(&[1], &[y], 1.0)).sum::<f64>();
        let box_rule = CompositeRule::new(-2.0, 2.0, &[], 32, 20);
        let om = CompositeRule::new(-1.0, 1.0, &[], 32, 20);
        let norm = r.lambda * box_rule.integrate(|y| f(y).powi(2) + df(y).powi(2)) + r.mu * om.integrate(|y| df(y).powi(2));
        let g = gram_matrix(&k, &data.xs).unwrap();
        let cv = DVector::from_column_slice(c);
        let ctgc = cv.dot(&(&g * &cv));
        assert!((norm - ctgc).abs() <= 1e-4 * ctgc, "{norm} vs {ctgc}");
    }

    #[test]
    fn stronger_physics_flattens_the_fit() {
        let data = noisy(80, 6, |x| 1.0 + 0.5 * x);
        let mut prev = f64::INFINITY;
        let mut inversions = 0;
        for mu in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let r = reg(0.02, mu);
            let k = closed(r.lambda, r.mu);
            let model = fit(&k, &data).unwrap();
            let c = model.dual_coeffs().unwrap();
            let kinks: Vec<f64> = data.xs.iter().map(|x| x[0]).collect();
            let rule = CompositeRule::new(-1.0, 1.0, &kinks, 2, 16);
            let energy = rule.integrate(|y| {
                data.xs
                    .iter()
                    .zip(c)
                    .map(|(x, ci)| ci * closed_form_kernel_1d_dy(&r, 1.0, x[0], y))
                    .sum::<f64>()
                    .powi(2)
            });
            if energy > prev + 1e-6 {
                inversions += 1;
            }
            prev = energy;
        }
        assert!(inversions <= 1);
    }

    #[test]
    fn spectral_dual_and_low_rank_agree() {
        let k = spectral(0.01, 0.2, 129);
        let data = noisy(500, 8, |x| 1.0 + 0.1 * x.abs());
        let dual = fit_with(&k, &data, Solver::Dual).unwrap();
        let low = fit_with(&k, &data, Solver::LowRank { basis_size: None }).unwrap();
        let grid: Vec<Vec<f64>> = (0..41).map(|i| vec![-1.0 + 0.05 * i as f64]).collect();
        let (a, b) = (dual.predict_many(&grid).unwrap(), low.predict_many(&grid).unwrap());
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-6 * scale, "{p} vs {q}");
        }
    }

    #[test]
    fn closed_form_low_rank_tracks_dual() {
        let n = 500;
        let r = speedup_schedule(n, 0.0).unwrap();
        let k = Kernel::new(KernelConfig::closed_form_1d(r, 1.0).unwrap()).unwrap();
        let data = noisy(n, 3, |_| 1.0);
        let dual = fit_with(&k, &data, Solver::Dual).unwrap();
        let low = fit_with(&k, &data, Solver::LowRank { basis_size: Some(2048) }).unwrap();
        let grid: Vec<Vec<f64>> = (0..41).map(|i| vec![-1.0 + 0.05 * i as f64]).collect();
        let (a, b) = (dual.predict_many(&grid).unwrap(), low.predict_many(&grid).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-4 * p.abs(), "{p} vs {q}");
        }
    }

    #[test]
    fn cosine_moments_match_direct_products() {
        let b = NeumannCosineBasis::new(1.0, 300);
        let data = noisy(50, 12, |x| x);
        let (gram, rhs) = cosine_normal_equations(&b, &data);
        let phi = DMatrix::from_fn(50, 300, |i, k| (b.frequency(k) * (data.xs[i][0] + 1.0)).cos());
        let want = phi.transpose() * &phi;
        assert!((gram - want).amax() < 1e-10);
        let want_rhs = phi.transpose() * DVector::from_column_slice(&data.ys);
        assert!((rhs - want_rhs).amax() < 1e-10);
    }

    #[test]
    fn l2_error_properties() {
        let dom = DomainSpec::interval(1.0).unwrap();
        let k = closed(0.1, 0.1);
        let data = noisy(30, 5, |x| x);
        let model = fit(&k, &data).unwrap();
        let zero = KernelModel {
            representation: Representation::Dual {
                xs: data.xs.clone(),
                coeffs: vec![0.0; 30],
            },
            ..model.clone()
        };
        assert_eq!(l2_error(&zero, &|_: &[f64]| 1.0, &dom, 100, 1).unwrap(), 1.0);
        // Target equal to the model's own prediction.
        let m2 = model.clone();
        let own = move |x: &[f64]| m2.predict(x).unwrap();
        assert_eq!(l2_error(&model, &own, &dom, 100, 1).unwrap(), 0.0);

        // Doubling n_eval halves the variance.
        let target = |x: &[f64]| x[0].powi(3);
        let var = |m: usize| {
            let v: Vec<f64> = (0..50).map(|s| l2_error(&zero, &target, &dom, m, 1000 + s).unwrap()).collect();
            let mean = v.iter().sum::<f64>() / 50.0;
            v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 49.0
        };
        let ratio = var(200) / var(400);
        assert!((ratio - 2.0).abs() <= 0.5 * 2.0 * 0.25 * 2.0, "ratio {ratio}");
    }

    #[test]
    fn model_file_round_trip() {
        let k = closed(0.1, 0.3);
        let model = fit(&k, &noisy(10, 1, |x| x)).unwrap();
        let back = KernelModel::from_file(model.to_file()).unwrap();
        assert_eq!(back.predict(&[0.2]).unwrap(), model.predict(&[0.2]).unwrap());
    }

    #[test]
    fn operator_values_match_finite_differences() {
        let data = noisy(300, 21, |x| (2.0 * x).sin());
        let models = [
            fit_with(&closed(0.01, 0.1), &data, Solver::Dual).unwrap(),
            fit_with(&closed(0.01, 0.1), &data, Solver::LowRank { basis_size: Some(256) }).unwrap(),
            fit_with(&spectral(0.01, 0.1, 65), &data, Solver::Dual).unwrap(),
            fit_with(&spectral(0.01, 0.1, 65), &data, Solver::LowRank { basis_size: None }).unwrap(),
        ];
        // Probe away from the training points, where the dual closed-form fit has kinks.
        let probes = [-0.6543, 0.01234, 0.4321];
        for model in &models {
            let d = model.operator_values(&probes.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
            for (&x, &dv) in probes.iter().zip(&d) {
                let mut h = 1e-6;
                while data.xs.iter().any(|p| (p[0] - x).abs() < 2.0 * h) {
                    h *= 0.1;
                }
                let fd = (model.predict(&[x + h]).unwrap() - model.predict(&[x - h]).unwrap()) / (2.0 * h);
                assert!((fd - dv).abs() <= 1e-5 * (1.0 + dv.abs()), "{fd} vs {dv}");
            }
        }
    }

    #[test]
    fn rejects_bad_data() {
        assert!(Dataset::<f64>::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![1.0]).is_err());
        let k = closed(1.0, 1.0);
        let outside = Dataset::new(vec![vec![1.5]], vec![1.0]).unwrap();
        assert!(matches!(fit(&k, &outside), Err(Error::PointOutsideDomain { .. })));
    }
}
