use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("grid mismatch: expected {expected} nodes, got {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("unsupported norm exponent p = {0}")]
    UnsupportedNorm(f64),

    #[error("linear solve broke down: {0}")]
    SolverBreakdown(String),

    #[error("eigensolver did not converge after {0} restarts")]
    EigenNoConvergence(usize),

    #[error("no spectral gap between eigenvalues {k} and {next}", next = .k + 1)]
    MissingGap { k: usize },

    #[error("mass constraint violated on component {component}: relative error {rel_err:e}")]
    MassConstraint { component: usize, rel_err: f64 },

    #[error("component {0} vanished")]
    ZeroComponent(usize),

    #[error("flow stagnated at step {step}: no descent down to dt = {dt:e}")]
    Stagnation { step: usize, dt: f64 },

    #[error("sampling produced no admissible points: {0}")]
    EmptySample(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
