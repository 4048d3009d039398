use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid axis needs at least {min} cells, got {got}")]
    GridTooSmall { min: usize, got: usize },

    #[error("invalid grid extent [{min}, {max}]")]
    InvalidExtent { min: f64, max: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("field contains non-finite values")]
    NonFinite,

    #[error("operation requires a boundary condition tag")]
    MissingBoundaryCondition,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("incompatible Neumann data: weighted mean {mean:e} exceeds tolerance {tol:e}")]
    Incompatible { mean: f64, tol: f64 },

    #[error("time {t} outside the sampled range [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },

    #[error("time step mismatch: state uses {expected}, got {got}")]
    StepMismatch { expected: f64, got: f64 },

    #[error("pressure deconvolution is ill-conditioned (instantaneous weight {weight:e})")]
    IllConditioned { weight: f64 },

    #[error("kernel must be isotropic (G = g I) for this operation")]
    AnisotropicKernel,
}

pub type Result<T> = std::result::Result<T, Error>;
