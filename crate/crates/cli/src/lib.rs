//! The `piml` command line.
//!
//! Exit codes: 0 on success, 2 when a flag or input fails validation, 1 when
//! a computation fails. Output files are written atomically.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use piml_core::effdim::{effective_dimension, minimax_schedule, pilot_model_error, speedup_schedule};
use piml_core::eigen1d::exact_spectrum_1d;
use piml_core::experiment::{
    log_spaced_grid, run_experiment, Aggregation, ExperimentConfig, ExperimentResult, NoiseModel, Scenario, ScenarioName,
};
use piml_core::io::{
    read_dataset_csv, read_file, read_points_csv, write_atomic, write_kernel_grid_csv, write_predictions_csv,
    write_records_csv,
};
use piml_core::kernel::{kernel_grid, Backend};
use piml_core::operator::{assemble_galerkin, default_n_max, truncated_spectrum, SpectrumTarget};
use piml_core::regressor::{fit_with, ModelFile, Solver};
use piml_core::{
    DomainSpec, Error, Kernel, KernelConfig, KernelModel, MultiIndexOperator, RegularizationParams, Spectrum,
};

pub mod config;

const AFTER_HELP: &str = "\
Configuration precedence: flags > --config file > defaults.
A config file holds one `key = value` per line, keys being long flag names
without dashes (e.g. `lambda = 0.01`, `n-max = 256`, `mean-of-logs = true`).
PIML_THREADS may replace --threads.";

#[derive(Parser, Debug)]
#[command(
    name = "piml",
    version,
    about = "Physics-informed kernel ridge regression: kernels, spectra, fits and convergence experiments",
    after_help = AFTER_HELP,
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for parallel sections [count, default: all cores]
    #[arg(long, global = true, env = "PIML_THREADS", value_name = "N")]
    threads: Option<usize>,

    /// File of `key = value` defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the kernel K(x, y) on a grid × grid lattice and write x,y,K rows (d = 1)
    #[command(args_override_self = true, after_help = AFTER_HELP)]
    Kernel(KernelCmd),
    /// Compute the leading eigenvalues a_m and write m,a_m,provenance rows
    #[command(args_override_self = true, after_help = AFTER_HELP)]
    Spectrum(SpectrumCmd),
    /// Effective dimension Σ κa_m/(1 + κa_m) of a spectrum CSV, printed as JSON
    #[command(args_override_self = true, after_help = AFTER_HELP)]
    Effdim(EffdimCmd),
    /// Fit the estimator to an x,y CSV and write the model as JSON
    #[command(args_override_self = true, after_help = AFTER_HELP)]
    Fit(FitCmd),
    /// Evaluate a fitted model at the points of a CSV and write x,y_hat rows
    #[command(args_override_self = true, after_help = AFTER_HELP)]
    Predict(PredictCmd),
    /// Monte Carlo convergence-rate experiment; writes n,replicate,err,lambda,mu,seed rows
    #[command(args_override_self = true, after_help = AFTER_HELP)]
    Experiment(ExperimentCmd),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OperatorArg {
    /// 𝒟 = d/dx (d = 1)
    Derivative,
    /// 𝒟 = Δ (any d)
    Laplacian,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    /// closed-form when 𝒟 = d/dx on Ω = [-L, L], spectral otherwise
    Auto,
    /// closed-form Green's function (𝒟 = d/dx on [-L, L] only)
    ClosedForm,
    /// truncated Fourier–Galerkin expansion on the periodic box
    Spectral,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Half-width L of Ω = [-L, L]^d; the periodic box is [-2L, 2L]^d [length, default 1]
    #[arg(long = "L", value_name = "LENGTH", default_value_t = 1.0, allow_negative_numbers = true)]
    half_width: f64,

    /// Sobolev weight λₙ > 0 [dimensionless]
    #[arg(long, value_name = "LAMBDA", allow_negative_numbers = true)]
    lambda: Option<f64>,

    /// Physics weight μₙ ≥ 0 [dimensionless]
    #[arg(long, value_name = "MU", allow_negative_numbers = true)]
    mu: Option<f64>,

    /// Differential operator 𝒟 of the physics penalty
    #[arg(long, value_enum, default_value = "derivative")]
    operator: OperatorArg,

    /// Dimension d [default 1]
    #[arg(long, value_name = "D", default_value_t = 1)]
    dim: usize,

    /// Observe on the whole periodic box [-2L, 2L]^d instead of Ω = [-L, L]^d
    #[arg(long)]
    full_box: bool,
}

#[derive(Args, Debug)]
struct BackendArgs {
    /// Kernel backend
    #[arg(long, value_enum, default_value = "auto")]
    backend: BackendArg,

    /// Fourier truncation of the spectral backend [frequencies, default: smallest N with λw(k_N) > 10⁶(λ+μ)]
    #[arg(long, value_name = "N")]
    n_max: Option<usize>,
}

#[derive(Args, Debug)]
struct KernelCmd {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Lattice points per axis over [-L, L] [count, default 101]
    #[arg(long, value_name = "N", default_value_t = 101)]
    grid: usize,
    /// Output CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// exact quantization roots when available (𝒟 = d/dx, d = 1, Ω = [-L, L]), Galerkin otherwise
    Auto,
    /// exact quantization roots
    Exact,
    /// eigenvalues of the truncated Galerkin system
    Galerkin,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    /// C𝒪ₙC, the operator restricted to Ω
    Restricted,
    /// 𝒪ₙ on the whole box
    Full,
}

#[derive(Args, Debug)]
struct SpectrumCmd {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Number of eigenvalues [count, default 200]
    #[arg(long, value_name = "M", default_value_t = 200)]
    count: usize,
    /// Eigenvalue method
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    /// Operator whose spectrum the Galerkin method computes
    #[arg(long, value_enum, default_value = "restricted")]
    target: TargetArg,
    /// Fourier truncation for the Galerkin method [frequencies, default: automatic rule]
    #[arg(long, value_name = "N")]
    n_max: Option<usize>,
    /// Output CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EffdimCmd {
    /// Spectrum CSV with columns m,a_m,provenance
    #[arg(long, value_name = "FILE")]
    spectrum: Option<PathBuf>,
    /// Density bound κ of ℙ_X [1/volume; 1/(2L) for uniform on [-L, L]]
    #[arg(long, value_name = "KAPPA")]
    kappa: Option<f64>,
    /// Also write the JSON report here
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    /// use --lambda and --mu
    None,
    /// λ = log(n)/n, μ = n^{-2/3}/‖𝒟f*‖ (or 1/log n when the model error is 0)
    Speedup,
    /// λ = n^{-2s/(2s+d)}√log n, μ = λ√log n
    Minimax,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    /// dual up to 3000 samples, low rank above
    Auto,
    Dual,
    LowRank,
}

#[derive(Args, Debug)]
struct FitCmd {
    /// Training CSV with columns x,y (or x1,…,xd,y)
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Derive λₙ, μₙ from the sample size instead of --lambda/--mu
    #[arg(long, value_enum, default_value = "none")]
    schedule: ScheduleArg,
    /// ‖𝒟f*‖_{L²(Ω)} for the speedup schedule: a number ≥ 0, or `pilot` to estimate it from a minimax-schedule fit
    #[arg(long, value_name = "VALUE|pilot")]
    model_error: Option<String>,
    /// Linear solver
    #[arg(long, value_enum, default_value = "auto")]
    solver: SolverArg,
    /// Basis size of the low-rank solver [modes, default: automatic]
    #[arg(long, value_name = "N")]
    basis_size: Option<usize>,
    /// Output model JSON [default: stdout]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictCmd {
    /// Model JSON written by `piml fit`
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// CSV of evaluation points with column x (or x1,…,xd); other columns are ignored
    #[arg(long, value_name = "FILE")]
    points: Option<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    /// N(0, σ²)
    Gaussian,
    /// uniform on [-M, M]
    Bounded,
    /// noiseless targets
    None,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ExperimentBackendArg {
    ClosedForm,
    Spectral,
}

#[derive(Args, Debug)]
struct ExperimentCmd {
    /// perfect: Y = 1 + ε; imperfect: Y = 1 + 0.1|X| + ε; X ~ U([-1, 1])
    #[arg(long, value_name = "NAME", default_value = "perfect")]
    scenario: String,
    /// Root seed; task (n, r) uses a hash of (seed, n, r) [default 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicates per sample size [count, default 10]
    #[arg(long, value_name = "R", default_value_t = 10)]
    replicates: usize,
    /// Monte Carlo evaluation points per replicate [count, default 500]
    #[arg(long, value_name = "M", default_value_t = 500)]
    mc_eval: usize,
    /// Explicit comma-separated sample sizes (overrides the log-spaced grid)
    #[arg(long, value_name = "N1,N2,…", value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Smallest sample size of the log-spaced grid [count, default 10]
    #[arg(long, value_name = "N", default_value_t = 10)]
    grid_lo: usize,
    /// Largest sample size of the log-spaced grid [count, default 10000]
    #[arg(long, value_name = "N", default_value_t = 10_000)]
    grid_hi: usize,
    /// Points of the log-spaced grid [count, default 12]
    #[arg(long, value_name = "K", default_value_t = 12)]
    grid_points: usize,
    /// Noise law
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    /// Gaussian noise standard deviation σ [target units, default 1; 0 means noiseless]
    #[arg(long, value_name = "SIGMA", default_value_t = 1.0, allow_negative_numbers = true)]
    sigma: f64,
    /// Bound M of the bounded noise [target units, default 1]
    #[arg(long, value_name = "M", default_value_t = 1.0, allow_negative_numbers = true)]
    noise_bound: f64,
    /// Kernel backend
    #[arg(long, value_enum, default_value = "closed-form")]
    backend: ExperimentBackendArg,
    /// Fourier truncation of the spectral backend [frequencies, default 512]
    #[arg(long, value_name = "N")]
    n_max: Option<usize>,
    /// Linear solver
    #[arg(long, value_enum, default_value = "auto")]
    solver: SolverArg,
    /// Average log errors instead of taking the log of the mean error
    #[arg(long)]
    mean_of_logs: bool,
    /// Output CSV of per-replicate records [default: stdout]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write the summary JSON (rate fit and per-n means) here as well as to stdout
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flag or input: exit code 2.
    Validation(String),
    /// The computation failed: exit code 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

/// Flag spelling of a core parameter name.
fn flag_for(name: &str) -> Option<String> {
    const FLAGS: &[&str] = &[
        "lambda", "mu", "L", "n_max", "kappa", "count", "grid", "sigma", "noise_bound", "replicates", "mc_eval", "n_grid",
        "basis_size", "model_error", "scenario", "dim",
    ];
    FLAGS.contains(&name).then(|| format!("--{}", name.replace('_', "-")))
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { name, reason } => match flag_for(name) {
                Some(flag) => Self::Validation(format!("{flag}: {reason}")),
                None => Self::Validation(format!("invalid {name}: {reason}")),
            },
            Error::Unsupported(_) | Error::PointOutsideDomain { .. } | Error::Parse(_) | Error::Csv(_) => {
                Self::Validation(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn missing(flag: &str) -> CliError {
    CliError::Validation(format!("{flag} is required"))
}

/// Fails early when an output file cannot be created in its directory.
fn check_output(flag: &str, path: &Option<PathBuf>) -> CliResult<()> {
    if let Some(p) = path {
        let dir = match p.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        if !dir.is_dir() {
            return Err(CliError::Validation(format!(
                "{flag}: directory {} does not exist",
                dir.display()
            )));
        }
        if p.is_dir() {
            return Err(CliError::Validation(format!("{flag}: {} is a directory", p.display())));
        }
    }
    Ok(())
}

fn emit(path: &Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> piml_core::Result<()>) -> CliResult<()> {
    match path {
        Some(p) => write_atomic(p, write).map_err(|e| CliError::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush().map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

fn open(flag: &str, path: &Path) -> CliResult<std::fs::File> {
    read_file(path).map_err(|e| CliError::Validation(format!("{flag}: cannot open {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))
}

impl ProblemArgs {
    fn operator(&self) -> CliResult<MultiIndexOperator> {
        match self.operator {
            OperatorArg::Derivative if self.dim != 1 => Err(CliError::Validation(
                "--dim: the derivative operator is one-dimensional; use --operator laplacian for d > 1".into(),
            )),
            OperatorArg::Derivative => Ok(MultiIndexOperator::derivative_1d()),
            OperatorArg::Laplacian => Ok(MultiIndexOperator::laplacian(self.dim)?),
        }
    }

    fn domain(&self) -> CliResult<DomainSpec> {
        if self.dim == 0 || self.dim > 3 {
            return Err(CliError::Validation("--dim: must be 1, 2 or 3".into()));
        }
        Ok(if self.full_box {
            DomainSpec::full_box(self.dim, self.half_width)?
        } else {
            DomainSpec::cube(self.dim, self.half_width)?
        })
    }

    fn reg_or(&self, lambda: f64, mu: f64) -> CliResult<RegularizationParams> {
        Ok(RegularizationParams::new(self.lambda.unwrap_or(lambda), self.mu.unwrap_or(mu))?)
    }

    /// Whether the closed-form kernel and exact spectrum apply.
    fn closed_form_eligible(&self) -> bool {
        self.operator == OperatorArg::Derivative && self.dim == 1 && !self.full_box
    }
}

impl BackendArgs {
    fn resolve(&self, problem: &ProblemArgs, op: &MultiIndexOperator, reg: &RegularizationParams) -> CliResult<Backend> {
        let spectral = match self.backend {
            BackendArg::Auto => !problem.closed_form_eligible(),
            BackendArg::ClosedForm => false,
            BackendArg::Spectral => true,
        };
        if !spectral {
            if self.n_max.is_some() {
                return Err(CliError::Validation(
                    "--n-max: only meaningful with --backend spectral (conflicts with the closed-form backend)".into(),
                ));
            }
            return Ok(Backend::ClosedForm1d);
        }
        let n_max = match self.n_max {
            Some(n) => n,
            None => default_n_max(op, reg, problem.half_width)?,
        };
        Ok(Backend::Spectral { n_max })
    }
}

fn build_kernel(problem: &ProblemArgs, backend: &BackendArgs, reg: RegularizationParams) -> CliResult<Kernel> {
    let op = problem.operator()?;
    let dom = problem.domain()?;
    let backend = backend.resolve(problem, &op, &reg)?;
    Ok(Kernel::new(KernelConfig::new(op, reg, dom, backend)?)?)
}

fn cmd_kernel(cmd: KernelCmd) -> CliResult<()> {
    let reg = cmd.problem.reg_or(1.0, 1.0)?;
    if cmd.problem.dim != 1 {
        return Err(CliError::Validation("--dim: kernel grids are written for d = 1 only".into()));
    }
    check_output("--out", &cmd.out)?;
    let kernel = build_kernel(&cmd.problem, &cmd.backend, reg)?;
    let l = cmd.problem.half_width;
    let rows = kernel_grid(&kernel, -l, l, cmd.grid)?;
    emit(&cmd.out, |w| write_kernel_grid_csv(&rows, w))
}

fn cmd_spectrum(cmd: SpectrumCmd) -> CliResult<()> {
    let reg = cmd.problem.reg_or(1.0, 1.0)?;
    let op = cmd.problem.operator()?;
    let dom = cmd.problem.domain()?;
    if cmd.count == 0 {
        return Err(CliError::Validation("--count: must be at least 1".into()));
    }
    check_output("--out", &cmd.out)?;
    let exact = match cmd.method {
        MethodArg::Auto => cmd.problem.closed_form_eligible(),
        MethodArg::Exact => true,
        MethodArg::Galerkin => false,
    };
    let spectrum: Spectrum = if exact {
        if !cmd.problem.closed_form_eligible() {
            return Err(CliError::Validation(
                "--method: exact spectra need --operator derivative, --dim 1 and Ω = [-L, L]".into(),
            ));
        }
        if cmd.n_max.is_some() {
            return Err(CliError::Validation("--n-max: only used by --method galerkin".into()));
        }
        exact_spectrum_1d(&reg, cmd.problem.half_width, cmd.count)?
    } else {
        let n_max = match cmd.n_max {
            Some(n) => n,
            None => default_n_max(&op, &reg, cmd.problem.half_width)?,
        };
        let sys = assemble_galerkin(&op, &reg, &dom, n_max)?;
        let target = match cmd.target {
            TargetArg::Restricted => SpectrumTarget::Restricted,
            TargetArg::Full => SpectrumTarget::Full,
        };
        let mut s = truncated_spectrum(&sys, target)?;
        if s.len() < cmd.count {
            return Err(CliError::Validation(format!(
                "--count: the truncated spectrum has only {} eigenvalues; raise --n-max",
                s.len()
            )));
        }
        s.values.truncate(cmd.count);
        s.provenance.truncate(cmd.count);
        s.eigenfunctions = None;
        s
    };
    emit(&cmd.out, |w| spectrum.write_csv(w))
}

fn cmd_effdim(cmd: EffdimCmd) -> CliResult<()> {
    let path = cmd.spectrum.as_ref().ok_or_else(|| missing("--spectrum"))?;
    let kappa = cmd.kappa.ok_or_else(|| missing("--kappa"))?;
    check_output("--out", &cmd.out)?;
    let spectrum = Spectrum::read_csv(open("--spectrum", path)?)?;
    let report = effective_dimension(&spectrum, kappa)?;
    let json = to_json(&report)?;
    println!("{json}");
    if cmd.out.is_some() {
        emit(&cmd.out, |w| Ok(writeln!(w, "{json}")?))?;
    }
    Ok(())
}

fn cmd_fit(cmd: FitCmd) -> CliResult<()> {
    // Regularization flags are checked before any file is touched, each on
    // its own so the message names the offending one.
    if let Some(lambda) = cmd.problem.lambda {
        RegularizationParams::new(lambda, 0.0)?;
    }
    if let Some(mu) = cmd.problem.mu {
        RegularizationParams::new(1.0, mu)?;
    }
    let explicit = match cmd.schedule {
        ScheduleArg::None => {
            let lambda = cmd.problem.lambda.ok_or_else(|| missing("--lambda (or --schedule)"))?;
            let mu = cmd.problem.mu.ok_or_else(|| missing("--mu (or --schedule)"))?;
            Some(RegularizationParams::new(lambda, mu)?)
        }
        _ => {
            if cmd.problem.lambda.is_some() || cmd.problem.mu.is_some() {
                return Err(CliError::Validation(
                    "--schedule: conflicts with explicit --lambda/--mu".into(),
                ));
            }
            None
        }
    };
    if cmd.model_error.is_some() && cmd.schedule != ScheduleArg::Speedup {
        return Err(CliError::Validation("--model-error: only used by --schedule speedup".into()));
    }
    let solver = match (cmd.solver, cmd.basis_size) {
        (SolverArg::LowRank, basis_size) => Solver::LowRank { basis_size },
        (_, Some(_)) => {
            return Err(CliError::Validation("--basis-size: only used by --solver low-rank".into()));
        }
        (SolverArg::Auto, None) => Solver::Auto,
        (SolverArg::Dual, None) => Solver::Dual,
    };
    let path = cmd.data.as_ref().ok_or_else(|| missing("--data"))?;
    check_output("--out", &cmd.out)?;
    let data = read_dataset_csv(open("--data", path)?)?;
    let n = data.len();
    let op = cmd.problem.operator()?;
    let reg = match explicit {
        Some(reg) => reg,
        None if cmd.schedule == ScheduleArg::Minimax => minimax_schedule(n, op.order, op.dim)?,
        None => {
            let model_error = match cmd.model_error.as_deref() {
                None => return Err(missing("--model-error (number or `pilot`)")),
                Some("pilot") => {
                    let pilot_reg = minimax_schedule(n, op.order, op.dim)?;
                    let pilot = fit_with(&build_kernel(&cmd.problem, &cmd.backend, pilot_reg)?, &data, solver)?;
                    let (panels, order) = match op.dim {
                        1 => (64, 8),
                        2 => (16, 6),
                        _ => (4, 6),
                    };
                    let est = pilot_model_error(&pilot, panels, order)?;
                    eprintln!("pilot estimate of ‖𝒟f*‖: {est}");
                    est
                }
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| CliError::Validation(format!("--model-error: expected a number or `pilot`, got {v:?}")))?,
            };
            speedup_schedule(n, model_error)?
        }
    };
    let kernel = build_kernel(&cmd.problem, &cmd.backend, reg)?;
    let model = fit_with(&kernel, &data, solver)?;
    let d = model.diagnostics;
    eprintln!(
        "fitted n={n} λ={} μ={} basis={} residual={:e} (‖rhs‖={:e}) condition≈{:e}",
        reg.lambda, reg.mu, d.basis_size, d.solver_residual, d.rhs_norm, d.condition_estimate
    );
    let json = to_json(&model.to_file())?;
    emit(&cmd.out, |w| Ok(writeln!(w, "{json}")?))
}

fn cmd_predict(cmd: PredictCmd) -> CliResult<()> {
    let model_path = cmd.model.as_ref().ok_or_else(|| missing("--model"))?;
    let points_path = cmd.points.as_ref().ok_or_else(|| missing("--points"))?;
    check_output("--out", &cmd.out)?;
    let file: ModelFile<f64> = serde_json::from_reader(std::io::BufReader::new(open("--model", model_path)?))
        .map_err(|e| CliError::Validation(format!("--model: {e}")))?;
    let model = KernelModel::from_file(file)?;
    let points: Vec<Vec<f64>> = read_points_csv(open("--points", points_path)?)?;
    let values = model.predict_many(&points)?;
    emit(&cmd.out, |w| write_predictions_csv(&points, &values, w))
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    scenario: String,
    seed: u64,
    replicates: usize,
    mc_eval: usize,
    aggregation: Aggregation,
    n_grid: &'a [usize],
    err_mean: &'a [f64],
    err_std: &'a [f64],
    slope: Option<f64>,
    intercept: Option<f64>,
    r2: Option<f64>,
    failures: usize,
}

fn summary<'a>(res: &'a ExperimentResult, cfg: &ExperimentConfig) -> ExperimentSummary<'a> {
    ExperimentSummary {
        scenario: res.scenario.to_string(),
        seed: res.seed,
        replicates: cfg.replicates,
        mc_eval: cfg.mc_eval,
        aggregation: res.aggregation,
        n_grid: &res.n_grid,
        err_mean: &res.err_mean,
        err_std: &res.err_std,
        slope: res.rate.map(|r| r.slope),
        intercept: res.rate.map(|r| r.intercept),
        r2: res.rate.map(|r| r.r2),
        failures: res.failures,
    }
}

fn cmd_experiment(cmd: ExperimentCmd) -> CliResult<()> {
    let name: ScenarioName = cmd.scenario.parse()?;
    let noise = match cmd.noise {
        NoiseArg::None => NoiseModel::None,
        NoiseArg::Gaussian if cmd.sigma == 0.0 => NoiseModel::None,
        NoiseArg::Gaussian => NoiseModel::gaussian(cmd.sigma)?,
        NoiseArg::Bounded => NoiseModel::bounded(cmd.noise_bound)?,
    };
    let scenario = Scenario::by_name(name, noise)?;
    let backend = match (cmd.backend, cmd.n_max) {
        (ExperimentBackendArg::ClosedForm, Some(_)) => {
            return Err(CliError::Validation(
                "--n-max: only meaningful with --backend spectral (conflicts with the closed-form backend)".into(),
            ))
        }
        (ExperimentBackendArg::ClosedForm, None) => Backend::ClosedForm1d,
        (ExperimentBackendArg::Spectral, n) => Backend::Spectral { n_max: n.unwrap_or(512) },
    };
    let n_grid = match cmd.n_grid {
        Some(g) => g,
        None => {
            if cmd.grid_lo < 2 || cmd.grid_hi <= cmd.grid_lo || cmd.grid_points < 3 {
                return Err(CliError::Validation(
                    "--grid-lo/--grid-hi/--grid-points: need 2 ≤ lo < hi and at least 3 points".into(),
                ));
            }
            log_spaced_grid(cmd.grid_lo, cmd.grid_hi, cmd.grid_points)
        }
    };
    let cfg = ExperimentConfig {
        n_grid,
        replicates: cmd.replicates,
        mc_eval: cmd.mc_eval,
        seed: cmd.seed,
        backend,
        solver: match cmd.solver {
            SolverArg::Auto => Solver::Auto,
            SolverArg::Dual => Solver::Dual,
            SolverArg::LowRank => Solver::LowRank { basis_size: None },
        },
        aggregation: if cmd.mean_of_logs {
            Aggregation::MeanOfLogs
        } else {
            Aggregation::MeanThenLog
        },
    };
    check_output("--out", &cmd.out)?;
    check_output("--summary", &cmd.summary)?;
    let res = run_experiment(&scenario, &cfg)?;
    eprintln!(
        "{} scenario: {} fits in {:.1} s, {} failed",
        res.scenario,
        res.records.len(),
        res.wall_time_secs,
        res.failures
    );
    emit(&cmd.out, |w| write_records_csv(&res.records, w))?;
    let json = to_json(&summary(&res, &cfg))?;
    if cmd.out.is_some() {
        println!("{json}");
    } else {
        eprintln!("{json}");
    }
    if cmd.summary.is_some() {
        emit(&cmd.summary, |w| Ok(writeln!(w, "{json}")?))?;
    }
    Ok(())
}

/// Splices `--config` entries in front of the subcommand's own flags.
fn apply_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let strs: Vec<Option<&str>> = argv.iter().map(|a| a.to_str()).collect();
    let mut config = None;
    let mut sub_at = None;
    let mut i = 1;
    while i < argv.len() {
        match strs[i] {
            Some("--config") => {
                config = strs.get(i + 1).copied().flatten().map(PathBuf::from);
                i += 2;
                continue;
            }
            Some(s) if s.starts_with("--config=") => config = Some(PathBuf::from(&s["--config=".len()..])),
            Some("--threads") if sub_at.is_none() => {
                i += 2;
                continue;
            }
            Some(s) if sub_at.is_none() && !s.starts_with('-') => sub_at = Some(i),
            _ => {}
        }
        i += 1;
    }
    let (Some(path), Some(at)) = (config, sub_at) else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let name = strs[at].unwrap_or_default();
    let Some(sub) = cmd.get_subcommands().find(|s| s.get_name() == name) else {
        // Let clap report the unknown subcommand.
        return Ok(argv);
    };
    let extra = config::to_args(&config::load(&path)?, sub)?;
    let mut out = argv[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads: must be at least 1".into()));
        }
        // Fails only if the pool was already built (repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Kernel(c) => cmd_kernel(c),
        Command::Spectrum(c) => cmd_spectrum(c),
        Command::Effdim(c) => cmd_effdim(c),
        Command::Fit(c) => cmd_fit(c),
        Command::Predict(c) => cmd_predict(c),
        Command::Experiment(c) => cmd_experiment(c),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn parse_and_dispatch<I, S>(argv: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let run = || -> CliResult<()> {
        let argv = apply_config(argv)?;
        let cli = match Cli::try_parse_from(argv) {
            Ok(cli) => cli,
            Err(e) => {
                let code = if e.use_stderr() { 2 } else { 0 };
                let _ = e.print();
                return if code == 0 {
                    Ok(())
                } else {
                    Err(CliError::Validation(String::new()))
                };
            }
        };
        dispatch(cli)
    };
    match run() {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            e.exit_code()
        }
    }
}
