use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("kernel error at ({row}, {col}): {reason}")]
    Kernel { row: usize, col: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {value} lies outside the open interval (-{bound}, {bound})")]
    Range { value: f64, bound: f64 },

    #[error("dissipativity certification failed at t={t}, x={x}: |g|={value} > k2 + k1|x| = {bound}")]
    Certification { t: f64, x: f64, value: f64, bound: f64 },

    #[error("monotonicity claim violated at t={t}, x={x}: d2 = {d2}")]
    Monotonicity { t: f64, x: f64, d2: f64 },

    #[error("solution blew up at t={t}")]
    BlowUp { t: f64 },

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("iteration limit {iterations} reached with residual {residual}")]
    Iteration { iterations: usize, residual: f64 },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("energy specification error: {0}")]
    Spec(String),

    #[error("bound violated: {0}")]
    Bound(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
