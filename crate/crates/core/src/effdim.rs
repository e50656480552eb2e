//! Effective dimension `𝒩(λ, μ) = Σ_m κa_m / (1 + κa_m)`, regularization
//! schedules, and the integral operator `L_K` of the kernel under a uniform
//! design.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::operator::RegularizationParams;
use crate::regressor::KernelModel;
use crate::quadrature::tensor_rule;
use crate::scalar::{from_usize, lit, Real};
use crate::spectrum::{decay_constant, Spectrum};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffDimReport<T> {
    /// `Σ_m (1 + (κ a_m)⁻¹)⁻¹` over the available eigenvalues.
    pub value: T,
    pub kappa: T,
    /// Upper estimate of the omitted modes' contribution (may be `∞` when
    /// the decay is not summable).
    pub truncation_tail_bound: T,
    pub count: usize,
}

fn tail_bound<T: Real>(spec: &Spectrum<T>, kappa: T) -> T {
    let m = spec.len();
    if spec.is_exact_1d() {
        // a_j ≤ c/(j−2)² for j ≥ 3, so Σ_{j>M} κ a_j ≤ κc ∫_M^∞ dt/(t−2)² = κc/(M−2).
        let c = match &spec.params {
            Some(p) => lit::<T>(4.0) * p.half_width * p.half_width / ((p.lambda + p.mu) * T::PI() * T::PI()),
            None => (3..=m)
                .map(|j| spec.values[j - 1] * from_usize::<T>(j - 2).powi(2))
                .fold(T::zero(), |a, b| a.max(b)),
        };
        if m <= 2 {
            return lit::<T>(f64::INFINITY);
        }
        return kappa * c / from_usize::<T>(m - 2);
    }
    // a_j ≤ C j^{-p}: Σ_{j>M} κ a_j ≤ κ C M^{1−p} / (p − 1).
    let p = match &spec.params {
        Some(p) => lit::<T>(2.0) * from_usize::<T>(p.order as usize) / from_usize::<T>(p.dim),
        None => match fitted_decay_exponent(&spec.values) {
            Some(p) => p,
            None => return lit::<T>(f64::INFINITY),
        },
    };
    if p <= T::one() {
        return lit::<T>(f64::INFINITY);
    }
    let lo = if m >= 20 { 10 } else { 1 };
    let c = decay_constant(&spec.values, p, lo, m).unwrap_or(T::zero());
    kappa * c * from_usize::<T>(m).powf(T::one() - p) / (p - T::one())
}

/// Least-squares slope of `−log a_m` against `log m` over the upper half of
/// the spectrum.
fn fitted_decay_exponent<T: Real>(values: &[T]) -> Option<T> {
    let m = values.len();
    if m < 8 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (m / 2..=m)
        .map(|j| ((j as f64).ln(), crate::scalar::to_f64(values[j - 1]).ln()))
        .collect();
    let (slope, _) = least_squares(&pts)?;
    T::from_f64(-slope)
}

pub(crate) fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// `𝒩 = Σ_m (1 + (κ a_m)⁻¹)⁻¹` with a bound on the omitted tail: from the
/// `4L²/((λ+μ)(m−2)²π²)` envelope for exact one-dimensional spectra, from
/// the power-law decay `a_m ≤ C m^{−2s/d}` (constant fitted on
/// `m ∈ [10, M]`) otherwise.
pub fn effective_dimension<T: Real>(spec: &Spectrum<T>, kappa: T) -> Result<EffDimReport<T>> {
    if spec.is_empty() {
        return Err(Error::invalid("spectrum", "must contain at least one eigenvalue"));
    }
    if !(kappa > T::zero()) || !kappa.is_finite() {
        return Err(Error::invalid("kappa", "must be positive and finite"));
    }
    let value = spec
        .values
        .iter()
        .fold(T::zero(), |acc, &a| acc + kappa * a / (T::one() + kappa * a));
    Ok(EffDimReport {
        value,
        kappa,
        truncation_tail_bound: tail_bound(spec, kappa),
        count: spec.len(),
    })
}

fn check_sample_count(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("n", "sample count must be at least 2"));
    }
    Ok(n as f64)
}

/// `λ = n^{−2s/(2s+d)} √log n`, `μ = λ √log n`.
pub fn minimax_schedule<T: Real>(n: usize, order: u32, dim: usize) -> Result<RegularizationParams<T>> {
    let nf = check_sample_count(n)?;
    if dim == 0 {
        return Err(Error::invalid("dimension", "must be at least 1"));
    }
    let s = f64::from(order);
    let log_n = nf.ln();
    let lambda = nf.powf(-2.0 * s / (2.0 * s + dim as f64)) * log_n.sqrt();
    RegularizationParams::new(lit(lambda), lit(lambda * log_n.sqrt()))
}

/// `λ = log(n)/n`; `μ = n^{−2/3}/‖𝒟f*‖` when the model error is positive,
/// `μ = 1/log n` when the physics is exact.
pub fn speedup_schedule<T: Real>(n: usize, model_error: T) -> Result<RegularizationParams<T>> {
    let nf = check_sample_count(n)?;
    if !(model_error >= T::zero()) || !model_error.is_finite() {
        return Err(Error::invalid("model_error", "must be non-negative and finite"));
    }
    let log_n = nf.ln();
    let lambda = lit::<T>(log_n / nf);
    let mu = if model_error > T::zero() {
        lit::<T>(nf.powf(-2.0 / 3.0)) / model_error
    } else {
        lit::<T>(1.0 / log_n)
    };
    RegularizationParams::new(lambda, mu)
}

/// Pilot estimate of the model error `‖𝒟f*‖_{L²(Ω)}` as `‖𝒟f̂‖_{L²(Ω)}` of a
/// fitted model, by tensor composite Gauss quadrature over Ω. Plug it into
/// [`speedup_schedule`] when the physics misfit is unknown.
pub fn pilot_model_error<T: Real>(model: &KernelModel<T>, panels: usize, order: usize) -> Result<T> {
    if panels == 0 || order == 0 {
        return Err(Error::invalid("quadrature", "panels and order must be positive"));
    }
    let (points, weights) = tensor_rule(&model.kernel.cfg.dom.omega, panels, order);
    let values = model.operator_values(&points)?;
    let sum = values
        .iter()
        .zip(&weights)
        .fold(T::zero(), |acc, (&v, &w)| acc + w * v * v);
    Ok(sum.sqrt())
}

/// Eigenvalues (non-increasing) of `L_K f = ∫_Ω K(·, y) f(y) dℙ_X(y)` for
/// the uniform law on Ω with density `κ = 1/|Ω|`, by Nyström discretization on
/// a tensor composite Gauss rule with `panels × order` nodes per axis.
pub fn integral_operator_eigenvalues<T: Real>(kernel: &Kernel<T>, panels: usize, order: usize) -> Result<Vec<T>> {
    if panels == 0 || order == 0 {
        return Err(Error::invalid("quadrature", "panels and order must be positive"));
    }
    let dom = &kernel.cfg.dom;
    let density = T::one() / dom.omega.volume();
    let (points, weights) = tensor_rule(&dom.omega, panels, order);
    let g = kernel.cross_matrix(&points, &points)?;
    let root: Vec<T> = weights.iter().map(|&w| (w * density).sqrt()).collect();
    let n = points.len();
    let mut a = DMatrix::from_fn(n, n, |i, j| root[i] * g[(i, j)] * root[j]);
    let half = lit::<T>(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)]) * half;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut vals: Vec<T> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen1d::{eigenvalue_bracket, exact_spectrum_1d};
    use crate::fourier::DomainSpec;
    use crate::kernel::{Backend, KernelConfig};
    use crate::operator::{assemble_galerkin, truncated_spectrum, MultiIndexOperator, SpectrumTarget};
    use crate::spectrum::Provenance;

    fn reg(lambda: f64, mu: f64) -> RegularizationParams<f64> {
        RegularizationParams::new(lambda, mu).unwrap()
    }

    fn bare(values: Vec<f64>) -> Spectrum<f64> {
        let n = values.len();
        Spectrum {
            values,
            provenance: vec![Provenance::Galerkin; n],
            params: None,
            eigenfunctions: None,
        }
    }

    #[test]
    fn single_unit_eigenvalue() {
        let r = effective_dimension(&bare(vec![1.0]), 1.0).unwrap();
        assert_eq!(r.value, 0.5);
        assert!(r.truncation_tail_bound >= 0.0);
        assert!(effective_dimension(&bare(vec![]), 1.0).is_err());
    }

    #[test]
    fn monotone_in_kappa_and_eigenvalues() {
        let spec = exact_spectrum_1d(&reg(0.01, 0.1), 1.0, 100).unwrap();
        let mut prev = f64::INFINITY;
        for kappa in [1.0, 0.1, 1e-2, 1e-4, 1e-8] {
            let v = effective_dimension(&spec, kappa).unwrap().value;
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-5);
        let mut bigger = spec.clone();
        bigger.values[5] *= 1.5;
        assert!(effective_dimension(&bigger, 0.5).unwrap().value > effective_dimension(&spec, 0.5).unwrap().value);
    }

    #[test]
    fn exact_spectrum_below_bracket_envelope() {
        let r = reg(1e-3, 1.0);
        let spec = exact_spectrum_1d(&r, 1.0, 200).unwrap();
        let kappa = 0.5;
        for (i, &a) in spec.values.iter().enumerate().skip(2) {
            let (_, hi) = eigenvalue_bracket(&r, 1.0, i + 1).unwrap();
            assert!(kappa * a / (1.0 + kappa * a) <= kappa * hi / (1.0 + kappa * hi));
        }
    }

    #[test]
    fn square_root_scaling_in_one_dimension() {
        let ts = [1e-1, 1e-2, 1e-3, 1e-4];
        let pts: Vec<(f64, f64)> = ts
            .iter()
            .map(|&t| {
                let spec = exact_spectrum_1d(&reg(t / 2.0, t / 2.0), 1.0, 4000).unwrap();
                let rep = effective_dimension(&spec, 1.0).unwrap();
                (t.ln(), (rep.value + rep.truncation_tail_bound).ln())
            })
            .collect();
        let (slope, _) = least_squares(&pts).unwrap();
        assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");
    }

    #[test]
    fn tail_bound_dominates_omitted_terms() {
        let r = reg(1e-3, 1e-2);
        let full = exact_spectrum_1d(&r, 1.0, 3000).unwrap();
        let mut short = exact_spectrum_1d(&r, 1.0, 300).unwrap();
        short.eigenfunctions = None;
        let kappa = 0.5;
        let omitted = effective_dimension(&full, kappa).unwrap().value - effective_dimension(&short, kappa).unwrap().value;
        let tail = effective_dimension(&short, kappa).unwrap().truncation_tail_bound;
        assert!(tail >= omitted && tail < 10.0 * omitted.max(1e-12), "{tail} vs {omitted}");

        let op = MultiIndexOperator::derivative_1d();
        let dom = DomainSpec::interval(1.0).unwrap();
        let g = truncated_spectrum(&assemble_galerkin(&op, &r, &dom, 128).unwrap(), SpectrumTarget::Restricted).unwrap();
        let rep = effective_dimension(&g, kappa).unwrap();
        assert!(rep.truncation_tail_bound.is_finite() && rep.truncation_tail_bound > 0.0);
    }

    #[test]
    fn schedules() {
        let m = minimax_schedule::<f64>(8, 1, 1).unwrap();
        assert!((m.lambda - 8f64.powf(-2.0 / 3.0) * 8f64.ln().sqrt()).abs() < 1e-15);
        assert!((m.mu / m.lambda - 8f64.ln().sqrt()).abs() < 1e-12);
        let m = minimax_schedule::<f64>(1000, 1, 1).unwrap();
        assert!((m.lambda - 0.02628).abs() < 1e-4);
        assert!(minimax_schedule::<f64>(1, 1, 1).is_err());

        let s = speedup_schedule(100, 0.0f64).unwrap();
        assert!((s.mu - 0.2171).abs() < 1e-4);
        let s = speedup_schedule(10_000, (2.0f64 / 300.0).sqrt()).unwrap();
        assert!((s.mu - 2.63e-2).abs() < 1e-4);
        let mut prev = f64::INFINITY;
        for n in 3..500 {
            let l = speedup_schedule(n, 0.0f64).unwrap().lambda;
            assert!(l < prev);
            prev = l;
        }
        assert!(speedup_schedule(10, -1.0).is_err());
    }

    #[test]
    fn integral_operator_dominated_by_restricted_operator() {
        let r = reg(1.0, 1.0);
        let dom = DomainSpec::interval(1.0).unwrap();
        let kernel = Kernel::new(KernelConfig::new(MultiIndexOperator::derivative_1d(), r, dom.clone(), Backend::Spectral { n_max: 256 }).unwrap()).unwrap();
        let lk = integral_operator_eigenvalues(&kernel, 20, 20).unwrap();
        let exact = exact_spectrum_1d(&r, 1.0, 40).unwrap();
        for (m, (&l, &a)) in lk.iter().zip(&exact.values).take(30).enumerate() {
            let bound = dom.kappa * a;
            assert!(l <= bound * (1.0 + 1e-3), "m={} {} > {}", m + 1, l, bound);
        }
        // Near equality for the leading modes.
        assert!((lk[0] - dom.kappa * exact.values[0]).abs() < 1e-3 * lk[0]);
    }

    #[test]
    fn pilot_recovers_model_error() {
        use crate::regressor::{fit, Dataset};
        // f* = 1 + 0.1|x| has ‖f*′‖_{L²([-1,1])} = √0.02.
        let xs: Vec<Vec<f64>> = (0..400).map(|i| vec![-1.0 + 2.0 * (i as f64 + 0.5) / 400.0]).collect();
        let ys = xs.iter().map(|x| 1.0 + 0.1 * x[0].abs()).collect();
        let kernel = Kernel::new(KernelConfig::closed_form_1d(reg(1e-5, 1e-5), 1.0).unwrap()).unwrap();
        let model = fit(&kernel, &Dataset::new(xs, ys).unwrap()).unwrap();
        let est = pilot_model_error(&model, 64, 8).unwrap();
        assert!((est - 0.02f64.sqrt()).abs() < 0.05 * 0.02f64.sqrt(), "{est}");
    }
}
