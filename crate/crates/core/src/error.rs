use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix `{0}` is not symmetric (max asymmetry {1:e})")]
    NotSymmetric(&'static str, f64),

    #[error("matrix `{name}` is numerically singular (smallest |eigenvalue| {smallest:e}, threshold {threshold:e})")]
    Singular {
        name: &'static str,
        smallest: f64,
        threshold: f64,
    },

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("score overflow at pair ({i}, {j}): exponent {exponent} exceeds guard {guard}")]
    ScoreOverflow {
        i: usize,
        j: usize,
        exponent: f64,
        guard: f64,
    },

    #[error("exponent overflow: eta(t) = {0} exceeds 700")]
    ExponentOverflow(f64),

    #[error("two-step method needs a bootstrap step before it can advance")]
    BootstrapRequired,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
