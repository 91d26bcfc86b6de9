use thiserror::Error;

use crate::admm::TrajectoryVars;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A covariance matrix stayed indefinite after the full jitter ladder.
    #[error("ill-conditioned covariance: factorization failed with jitter up to {max_jitter:e}")]
    IllConditioned { max_jitter: f64 },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// The per-agent trajectory subproblem did not converge. The best iterate
    /// found so far is attached so callers can inspect or fall back to it.
    #[error("subproblem failure for agent {agent} at outer iteration {iteration}: {reason}")]
    SubproblemFailure { agent: usize, iteration: usize, reason: String, best: Box<TrajectoryVars> },

    #[error("agent channel closed unexpectedly")]
    ChannelClosed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
