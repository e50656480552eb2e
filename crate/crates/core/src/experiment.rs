//! Monte Carlo convergence-rate experiments.
//!
//! For every sample size `n` and replicate, a dataset is drawn, the
//! regularization follows [`speedup_schedule`] with the scenario's model
//! error, the estimator is fitted and its squared `L²(ℙ_X)` error is
//! estimated on fresh points. A least-squares line through
//! `(log n, log err)` gives the empirical rate.
//!
//! Seeds: task `(n, r)` uses `child_seed(seed, n, r)`, a SplitMix64-style
//! hash, to seed its own ChaCha8 stream. The stream first yields the `n`
//! training points, then the noise, then the evaluation points. Results do
//! not depend on the number of worker threads.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effdim::speedup_schedule;
use crate::error::{Error, Result};
use crate::fourier::DomainSpec;
use crate::kernel::{Backend, Kernel, KernelConfig};
use crate::operator::MultiIndexOperator;
use crate::regressor::{fit_with, sample_uniform, squared_error_on, Dataset, Solver};
use crate::scalar::{lit, to_f64, Real};

/// Target function `f*`.
pub type TargetFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
/// Draws one point of the design law.
pub type PointSampler<T> = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<T> + Send + Sync>;
/// Draws one noise value.
pub type NoiseSampler<T> = Arc<dyn Fn(&mut ChaCha8Rng) -> T + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Perfect,
    Imperfect,
    Custom,
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Perfect => "perfect",
            Self::Imperfect => "imperfect",
            Self::Custom => "custom",
        })
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(Self::Perfect),
            "imperfect" => Ok(Self::Imperfect),
            "custom" => Ok(Self::Custom),
            other => Err(Error::invalid("scenario", format!("unknown scenario {other:?} (perfect, imperfect)"))),
        }
    }
}

/// Noise satisfying the sub-Gamma moment condition
/// `𝔼|ε|^ℓ ≤ ½ ℓ! σ² M^{ℓ−2}`.
#[derive(Clone)]
pub enum NoiseModel<T> {
    /// No noise at all.
    None,
    /// `N(0, σ²)`, σ > 0.
    Gaussian { sigma: T },
    /// Uniform on `[−M, M]`, M > 0.
    Bounded { bound: T },
    Custom { sampler: NoiseSampler<T>, sigma: T, bound: T },
}

impl<T: Real> NoiseModel<T> {
    pub fn gaussian(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::invalid("sigma", "Gaussian noise needs σ > 0 (use no noise for σ = 0)"));
        }
        Ok(Self::Gaussian { sigma })
    }

    pub fn bounded(bound: T) -> Result<Self> {
        if !(bound > T::zero()) || !bound.is_finite() {
            return Err(Error::invalid("noise_bound", "must be positive and finite"));
        }
        Ok(Self::Bounded { bound })
    }

    /// `(σ, M)` of the moment condition.
    pub fn sub_gamma(&self) -> (T, T) {
        match self {
            Self::None => (T::zero(), T::zero()),
            // 𝔼|σZ|^ℓ = σ^ℓ 2^{ℓ/2} Γ((ℓ+1)/2)/√π ≤ ½ ℓ! σ^ℓ for ℓ ≥ 2.
            Self::Gaussian { sigma } => (*sigma, *sigma),
            // 𝔼|ε|^ℓ = M^ℓ/(ℓ+1) ≤ ½ ℓ! M² M^{ℓ−2}.
            Self::Bounded { bound } => (*bound, *bound),
            Self::Custom { sigma, bound, .. } => (*sigma, *bound),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> T {
        match self {
            Self::None => T::zero(),
            Self::Gaussian { sigma } => {
                let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
                *sigma * lit::<T>(z)
            }
            Self::Bounded { bound } => {
                let u: f64 = Uniform::new_inclusive(-1.0, 1.0).expect("unit interval").sample(rng);
                *bound * lit::<T>(u)
            }
            Self::Custom { sampler, .. } => sampler(rng),
        }
    }
}

impl<T: Real> fmt::Debug for NoiseModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "None"),
            Self::Gaussian { sigma } => write!(f, "Gaussian {{ sigma: {sigma} }}"),
            Self::Bounded { bound } => write!(f, "Bounded {{ bound: {bound} }}"),
            Self::Custom { sigma, bound, .. } => write!(f, "Custom {{ sigma: {sigma}, bound: {bound} }}"),
        }
    }
}

/// Distribution of the inputs.
#[derive(Clone)]
pub enum DesignLaw<T> {
    /// Uniform on Ω.
    Uniform,
    /// Any law on Ω whose density is bounded by the domain's `κ`.
    Custom(PointSampler<T>),
}

#[derive(Clone)]
pub struct Scenario<T: Real> {
    pub name: ScenarioName,
    pub target: TargetFn<T>,
    pub noise: NoiseModel<T>,
    pub x_law: DesignLaw<T>,
    /// `‖𝒟f*‖_{L²(Ω)}`, which selects the μ schedule.
    pub model_error: T,
    pub op: MultiIndexOperator<T>,
    pub dom: DomainSpec<T>,
}

impl<T: Real> fmt::Debug for Scenario<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("noise", &self.noise)
            .field("model_error", &self.model_error)
            .field("op", &format_args!("{}", self.op))
            .field("dom", &self.dom)
            .finish_non_exhaustive()
    }
}

impl<T: Real> Scenario<T> {
    /// `Y = 1 + ε`, `X ~ U([−1, 1])`, `ε ~ N(0, σ²)`, `𝒟 = d/dx`.
    pub fn perfect(noise: NoiseModel<T>) -> Self {
        Self {
            name: ScenarioName::Perfect,
            target: Arc::new(|_| T::one()),
            noise,
            x_law: DesignLaw::Uniform,
            model_error: T::zero(),
            op: MultiIndexOperator::derivative_1d(),
            dom: DomainSpec::interval(T::one()).expect("unit interval"),
        }
    }

    /// `Y = 1 + 0.1|X| + ε` with the model error taken as `√(2/300)`, the
    /// value used to set μ in the reference experiment.
    ///
    /// (The exact value is `‖0.1 sign(x)‖_{L²([−1,1])} = √(2/100)`; `√(2/300)`
    /// is `‖0.1|x|‖`. Only μ's constant changes, not its `n^{−2/3}` rate.)
    pub fn imperfect(noise: NoiseModel<T>) -> Self {
        Self {
            name: ScenarioName::Imperfect,
            target: Arc::new(|x: &[T]| T::one() + lit::<T>(0.1) * x[0].abs()),
            model_error: lit::<T>((2.0f64 / 300.0).sqrt()),
            ..Self::perfect(noise)
        }
    }

    pub fn by_name(name: ScenarioName, noise: NoiseModel<T>) -> Result<Self> {
        match name {
            ScenarioName::Perfect => Ok(Self::perfect(noise)),
            ScenarioName::Imperfect => Ok(Self::imperfect(noise)),
            ScenarioName::Custom => Err(Error::invalid(
                "scenario",
                "custom scenarios are built through the library API",
            )),
        }
    }

    fn draw_points(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
        match &self.x_law {
            DesignLaw::Uniform => sample_uniform(&self.dom, count, rng),
            DesignLaw::Custom(sampler) => (0..count).map(|_| sampler(rng)).collect(),
        }
    }
}

/// How replicate errors are combined before the log-log fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `log(mean err)`.
    #[default]
    MeanThenLog,
    /// `mean(log err)`, reported as the geometric mean.
    MeanOfLogs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub mc_eval: usize,
    pub seed: u64,
    pub backend: Backend,
    pub solver: Solver,
    pub aggregation: Aggregation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_grid: default_n_grid(),
            replicates: 10,
            mc_eval: 500,
            seed: 0,
            backend: Backend::ClosedForm1d,
            solver: Solver::Auto,
            aggregation: Aggregation::MeanThenLog,
        }
    }
}

/// 12 log-spaced sample sizes from 10 to 10⁴.
pub fn default_n_grid() -> Vec<usize> {
    log_spaced_grid(10, 10_000, 12)
}

/// `count` sizes log-spaced between `lo` and `hi`, rounded, duplicates
/// removed.
pub fn log_spaced_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count <= 1 || lo >= hi {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<usize> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    grid.dedup();
    grid
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of task `(n, replicate)`: SplitMix64 applied in turn to the root
/// seed, `n` and the replicate index.
pub fn child_seed(seed: u64, n: usize, replicate: usize) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let h = mix64(seed.wrapping_add(GOLDEN));
    let h = mix64(h ^ (n as u64).wrapping_add(GOLDEN));
    mix64(h ^ (replicate as u64).wrapping_add(GOLDEN))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    /// `None` when the fit failed.
    pub err: Option<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: ScenarioName,
    pub n_grid: Vec<usize>,
    pub err_mean: Vec<f64>,
    /// Sample standard deviation over replicates (0 with one replicate).
    pub err_std: Vec<f64>,
    pub records: Vec<ReplicateRecord>,
    pub rate: Option<RateFit>,
    pub failures: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn slope(&self) -> Option<f64> {
        self.rate.map(|r| r.slope)
    }
}

fn run_task<T: Real>(scenario: &Scenario<T>, cfg: &ExperimentConfig, n: usize, replicate: usize) -> ReplicateRecord {
    let seed = child_seed(cfg.seed, n, replicate);
    let reg = speedup_schedule::<T>(n, scenario.model_error);
    let (lambda, mu) = reg.as_ref().map_or((f64::NAN, f64::NAN), |r| (to_f64(r.lambda), to_f64(r.mu)));
    let err = reg.and_then(|reg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = scenario.draw_points(n, &mut rng);
        let ys = xs
            .iter()
            .map(|x| (scenario.target)(x) + scenario.noise.sample(&mut rng))
            .collect();
        let data = Dataset::new(xs, ys)?;
        let kernel = Kernel::new(KernelConfig::new(
            scenario.op.clone(),
            reg,
            scenario.dom.clone(),
            cfg.backend,
        )?)?;
        let model = fit_with(&kernel, &data, cfg.solver)?;
        let eval = scenario.draw_points(cfg.mc_eval, &mut rng);
        let target = scenario.target.clone();
        squared_error_on(&model, &move |x: &[T]| target(x), &eval)
    });
    ReplicateRecord {
        n,
        replicate,
        err: err.ok().map(to_f64).filter(|e| e.is_finite()),
        lambda,
        mu,
        seed,
    }
}

pub fn run_experiment<T: Real>(scenario: &Scenario<T>, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.n_grid.is_empty() {
        return Err(Error::invalid("n_grid", "must not be empty"));
    }
    if cfg.n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_grid", "must be strictly increasing"));
    }
    if cfg.n_grid[0] < 2 {
        return Err(Error::invalid("n_grid", "sample sizes must be at least 2"));
    }
    if cfg.replicates == 0 {
        return Err(Error::invalid("replicates", "must be at least 1"));
    }
    if cfg.mc_eval == 0 {
        return Err(Error::invalid("mc_eval", "must be at least 1"));
    }
    if !(scenario.model_error >= T::zero()) {
        return Err(Error::invalid("model_error", "must be non-negative"));
    }
    let started = Instant::now();
    let tasks: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    // Largest tasks first keeps the pool busy; order is restored below.
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(tasks[i].0));
    let mut done: Vec<(usize, ReplicateRecord)> = order
        .par_iter()
        .map(|&i| (i, run_task(scenario, cfg, tasks[i].0, tasks[i].1)))
        .collect();
    done.sort_by_key(|(i, _)| *i);
    let records: Vec<ReplicateRecord> = done.into_iter().map(|(_, r)| r).collect();

    let failures = records.iter().filter(|r| r.err.is_none()).count();
    if failures * 10 > records.len() {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: records.len(),
        });
    }

    let mut err_mean = Vec::with_capacity(cfg.n_grid.len());
    let mut err_std = Vec::with_capacity(cfg.n_grid.len());
    for chunk in records.chunks(cfg.replicates) {
        let errs: Vec<f64> = chunk.iter().filter_map(|r| r.err).collect();
        let (mean, std) = aggregate(&errs, cfg.aggregation);
        err_mean.push(mean);
        err_std.push(std);
    }
    let mut result = ExperimentResult {
        scenario: scenario.name,
        n_grid: cfg.n_grid.clone(),
        err_mean,
        err_std,
        records,
        rate: None,
        failures,
        seed: cfg.seed,
        aggregation: cfg.aggregation,
        wall_time_secs: 0.0,
    };
    result.rate = fit_rate(&result).ok();
    result.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(result)
}

/// `(mean, std)` of the replicate errors; NaN when none survived.
fn aggregate(errs: &[f64], how: Aggregation) -> (f64, f64) {
    if errs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / k;
    let std = if errs.len() > 1 {
        (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    match how {
        Aggregation::MeanThenLog => (mean, std),
        Aggregation::MeanOfLogs => {
            let logs: Vec<f64> = errs.iter().filter(|&&e| e > 0.0).map(|e| e.ln()).collect();
            if logs.is_empty() {
                return (0.0, std);
            }
            ((logs.iter().sum::<f64>() / logs.len() as f64).exp(), std)
        }
    }
}

/// Least-squares line through `(log n, log err_mean)`, skipping
/// non-positive or missing errors.
pub fn fit_rate(result: &ExperimentResult) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = result
        .n_grid
        .iter()
        .zip(&result.err_mean)
        .filter(|(_, &e)| e > 0.0 && e.is_finite())
        .map(|(&n, &e)| ((n as f64).ln(), e.ln()))
        .collect();
    fit_log_log(&pts)
}

/// Ordinary least squares `y = slope·x + intercept` with its coefficient of
/// determination; needs at least three points.
pub fn fit_log_log(pts: &[(f64, f64)]) -> Result<RateFit> {
    if pts.len() < 3 {
        return Err(Error::InsufficientData(pts.len()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("n_grid", "rate fit needs distinct sample sizes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(RateFit { slope, intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(ns: &[usize], f: impl Fn(f64) -> f64) -> ExperimentResult {
        ExperimentResult {
            scenario: ScenarioName::Custom,
            n_grid: ns.to_vec(),
            err_mean: ns.iter().map(|&n| f(n as f64)).collect(),
            err_std: vec![0.0; ns.len()],
            records: vec![],
            rate: None,
            failures: 0,
            seed: 0,
            aggregation: Aggregation::MeanThenLog,
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn exact_power_laws() {
        let ns = default_n_grid();
        let r = fit_rate(&synthetic(&ns, |n| 7.0 / n)).unwrap();
        assert!((r.slope + 1.0).abs() < 1e-12);
        assert!((r.intercept - 7f64.ln()).abs() < 1e-10);
        assert!((r.r2 - 1.0).abs() < 1e-12);
        let r = fit_rate(&synthetic(&ns, |n| 3.0 * n.powf(-2.0 / 3.0))).unwrap();
        assert!((r.slope + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_skips_non_positive_errors() {
        let ns = [10, 20, 40, 80];
        let r = fit_rate(&synthetic(&ns, |n| if n < 15.0 { 0.0 } else { 1.0 / n })).unwrap();
        assert!((r.slope + 1.0).abs() < 1e-12);
        assert!(fit_rate(&synthetic(&ns, |n| if n < 50.0 { -1.0 } else { 1.0 })).is_err());
    }

    #[test]
    fn grid_and_seeds() {
        let g = default_n_grid();
        assert_eq!(g.len(), 12);
        assert_eq!((g[0], g[11]), (10, 10_000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(child_seed(1, 10, 0), child_seed(1, 10, 1));
        assert_ne!(child_seed(1, 10, 0), child_seed(1, 11, 0));
        assert_ne!(child_seed(1, 10, 0), child_seed(2, 10, 0));
        assert_eq!(child_seed(42, 100, 3), child_seed(42, 100, 3));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = ExperimentConfig {
            n_grid: vec![10, 40, 160],
            replicates: 3,
            mc_eval: 100,
            seed: 7,
            ..Default::default()
        };
        let s = Scenario::<f64>::imperfect(NoiseModel::gaussian(1.0).unwrap());
        let a = run_experiment(&s, &cfg).unwrap();
        let b = run_experiment(&s, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.err_mean, b.err_mean);
        assert_eq!(a.rate, b.rate);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_experiment(&s, &cfg).unwrap());
        assert_eq!(a.records, c.records);
        assert!(a.records.iter().all(|r| r.err.unwrap() >= 0.0));
    }

    #[test]
    fn noiseless_constant_is_nearly_exact() {
        // Without noise only the ridge shrinkage remains: the constant is
        // damped by about 2λ = 2 log(n)/n, so err ≈ (2 log(n)/n)².
        let cfg = ExperimentConfig {
            n_grid: vec![50, 2000],
            replicates: 1,
            mc_eval: 200,
            seed: 3,
            ..Default::default()
        };
        let res = run_experiment(&Scenario::<f64>::perfect(NoiseModel::None), &cfg).unwrap();
        for (&n, &e) in res.n_grid.iter().zip(&res.err_mean) {
            let shrink = 2.0 * (n as f64).ln() / n as f64;
            assert!(e <= 1.5 * shrink * shrink, "n={n}: {e}");
        }
        assert!(res.err_mean[1] < 1e-4);
    }

    #[test]
    fn custom_noise_and_design() {
        let mut s = Scenario::<f64>::perfect(NoiseModel::bounded(0.5).unwrap());
        s.name = ScenarioName::Custom;
        s.x_law = DesignLaw::Custom(Arc::new(|rng: &mut ChaCha8Rng| {
            let u: f64 = Uniform::new(0.0, 1.0).unwrap().sample(rng);
            vec![u]
        }));
        let cfg = ExperimentConfig {
            n_grid: vec![20, 80, 320],
            replicates: 2,
            mc_eval: 50,
            ..Default::default()
        };
        let res = run_experiment(&s, &cfg).unwrap();
        assert_eq!(res.failures, 0);
        assert!(res.err_mean.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn rejects_bad_configs() {
        let s = Scenario::<f64>::perfect(NoiseModel::None);
        let bad = |cfg: ExperimentConfig| run_experiment(&s, &cfg).is_err();
        assert!(bad(ExperimentConfig { n_grid: vec![], ..Default::default() }));
        assert!(bad(ExperimentConfig { n_grid: vec![20, 10], ..Default::default() }));
        assert!(bad(ExperimentConfig { replicates: 0, ..Default::default() }));
        assert!(bad(ExperimentConfig { mc_eval: 0, ..Default::default() }));
        assert!(NoiseModel::gaussian(0.0f64).is_err());
    }
}
