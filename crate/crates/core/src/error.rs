use thiserror::Error;

/// Errors raised across the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("non-finite value in {context} at sample {sample}")]
    NonFinite { context: String, sample: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("oracle diverged: Lagrangian went from {initial} to {observed}; try a step size below {suggested_step}")]
    Divergence {
        initial: f64,
        observed: f64,
        suggested_step: f64,
    },

    #[error("problem is infeasible: best max slack {best_max_slack:.3e} after phase-one search")]
    Infeasible {
        best_max_slack: f64,
        witness_slacks: Vec<f64>,
    },

    #[error("dual iterate exceeded cap {cap:.1e} (norm {norm:.3e}); Slater-type feasibility margin is likely violated")]
    DualUnbounded { cap: f64, norm: f64 },

    #[error("missing checkpoint for iteration {0}")]
    MissingCheckpoint(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
