use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its precondition. `name` is the user-facing
    /// parameter name (the CLI maps it to the flag).
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("point {point:?} lies outside {region}")]
    PointOutsideDomain { point: Vec<f64>, region: String },

    #[error("Galerkin system with {modes} modes needs {required} bytes, budget is {budget}")]
    MemoryBudget {
        modes: usize,
        required: usize,
        budget: usize,
    },

    #[error("eigensolver failed: {reason} (condition estimate {condition:e})")]
    EigenSolver { reason: String, condition: f64 },

    #[error("eigenvalue a_{m} = {value:e} outside bracket [{lower:e}, {upper:e}]")]
    BracketViolation {
        m: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("Gram matrix not positive semi-definite: most negative eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("rate fit needs at least 3 positive error values, got {0}")]
    InsufficientData(usize),

    #[error("{failed} of {total} replicate fits failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
