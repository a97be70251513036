use thiserror::Error;

/// Errors raised by ingestion, model fitting and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed input file: {0}")]
    MalformedFile(String),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("degenerate design: {n_treated} treated and {n_control} control units")]
    DegenerateDesign { n_treated: usize, n_control: usize },

    #[error("cannot take log of non-positive value {value} in column `{column}`")]
    NonPositiveLog { column: String, value: f64 },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid feature specification: {0}")]
    InvalidSpec(String),

    #[error("information matrix is singular or rank deficient ({0})")]
    SingularInformation(String),

    #[error("complete or quasi-complete separation detected in logistic fit")]
    SeparationDetected,

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("missing nuisance component: {0}")]
    MissingNuisance(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{failed} of {total} bootstrap replicates failed (limit {limit:.1}%)")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: f64,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
