//! Error type shared by every solver in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model parameter is outside its admissible domain.
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// Inconsistent or unusable solver configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector/matrix dimensions do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite input handed to a pointwise evaluator.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A backward or forward integration produced a non-finite value.
    #[error("blow-up in {context} at node {index} (t = {time})")]
    BlowUp {
        context: String,
        index: usize,
        time: f64,
    },

    /// A grid field became non-finite at time slice `step`, state node `node`.
    #[error("blow-up in {context} at time slice {step}, state node {node}")]
    GridBlowUp {
        context: String,
        step: usize,
        node: usize,
    },

    /// Fixed-point iteration hit its cap; `trace` holds the per-iteration distances.
    #[error("no convergence after {iterations} iterations (last distance {last})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        trace: Vec<f64>,
    },
}

impl Error {
    /// True for errors caused by user-supplied parameters or configuration
    /// rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Config(_) | Error::Shape(_))
    }
}
