use thiserror::Error;

/// Errors produced by model construction, estimation, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or structural mismatch in an input matrix.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// The autoregressive coefficients admit no stationary solution.
    #[error("stationarity violated: max|lambda| + max|gamma| = {sum:.6} >= 1")]
    Stationarity { sum: f64 },

    /// The logistic observation model could not be fitted (perfect separation
    /// or a degenerate mask).
    #[error("singular logistic fit: {0}")]
    SingularFit(String),

    /// An estimated observation probability is too small for stable
    /// inverse-probability weighting.
    #[error("ill-posed weighting: row {row} has probability {prob:.3e} below floor {floor:.1e}")]
    IllPosedWeighting { row: usize, prob: f64, floor: f64 },

    /// A blockwise update denominator fell below the configured floor.
    #[error("ill-conditioned {block} block at node {index}: denominator {denominator:.6e}")]
    IllConditionedBlock {
        block: &'static str,
        index: usize,
        denominator: f64,
    },

    /// A dense linear solve or factorization failed.
    #[error("solve failure: {0}")]
    Solve(String),

    /// Degenerate input for an evaluation routine.
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
