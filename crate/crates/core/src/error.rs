use thiserror::Error;

/// Errors raised by mesh construction, assembly and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("grading exponent {gamma} must exceed 3/(2s) = {floor}")]
    Grading { gamma: f64, floor: f64 },

    #[error("negative integration bound a = {0}")]
    Domain(f64),

    #[error("PCG did not converge in {iters} iterations (relative residual {residual:e})")]
    Solver {
        iters: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("obstacle map requires a nonnegative trace; found {value:e} at vertex {vertex}")]
    NegativeTrace { vertex: usize, value: f64 },

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("size mismatch: expected {expected}, found {found}")]
    Mismatch { expected: usize, found: usize },

    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
