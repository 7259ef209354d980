use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("inversion of sigma_Y did not converge after {iterations} iterations (best residual {residual:e}, a = {a:?})")]
    Inversion {
        residual: f64,
        iterations: usize,
        a: Vec<f64>,
    },

    #[error("sigma_Y is singular in u at {0}")]
    Singular(String),

    #[error("non-finite {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("CFL condition violated: dt = {dt:e} exceeds bound {bound:e} (cfl_safety * dx^2 / (d * max|sigma sigma^T|) with drift and discount terms)")]
    Cfl { dt: f64, bound: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no scaling rate c <= {c_max} makes the rescaled drift non-decreasing in y; worst violation {worst:e} at {at}")]
    Scaling { c_max: f64, worst: f64, at: String },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn non_finite(what: impl Into<String>, location: impl Into<String>) -> Self {
        Error::NonFinite {
            what: what.into(),
            location: location.into(),
        }
    }
}
