use thiserror::Error;

use crate::gas::GasModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The marginal optimizer stopped without meeting its gradient tolerance.
    /// The best point found is still returned to the caller.
    #[error("marginal fit did not converge (scaled gradient norm {grad_norm:.3e})")]
    MarginalNotConverged { best: Box<GasModel>, grad_norm: f64 },

    #[error("zero total likelihood at t = {t}")]
    ZeroLikelihood { t: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
