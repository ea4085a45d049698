use thiserror::Error;

/// Errors produced by estimation, simulation, and elicitation routines.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid delay parameters: {0}")]
    InvalidDelay(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("csv parse error at row {row}: {message}")]
    CsvSchema { row: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("target density not finite at initial point (chain {chain}) after {attempts} jittered restarts")]
    BadInit { chain: usize, attempts: usize },

    #[error("diagnostics require at least {needed} {what}, got {got}")]
    NotEnoughDraws {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error(
        "sampler did not converge: max Rhat {max_rhat:.4} (limit {rhat_limit}), \
         min bulk ESS {min_ess_bulk:.1}, min tail ESS {min_ess_tail:.1} (limit {ess_limit})"
    )]
    NonConvergence {
        max_rhat: f64,
        min_ess_bulk: f64,
        min_ess_tail: f64,
        rhat_limit: f64,
        ess_limit: f64,
    },

    #[error("optimizer failed to converge after {evals} evaluations; best loss {best_loss:.6e}")]
    OptimizerFailure { evals: usize, best_loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
