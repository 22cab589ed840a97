use thiserror::Error;

/// Errors produced by the design, sampling and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The matrix is numerically rank deficient: its smallest singular value
    /// falls below `tol` times the largest.
    #[error("rank deficient matrix: smallest singular value {sigma_min:.3e} <= {tol:.3e} * {sigma_max:.3e}")]
    RankDeficient {
        sigma_min: f64,
        sigma_max: f64,
        tol: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    /// The mixture parameter must lie in [0.5, 0.75].
    #[error("alpha = {alpha} outside the admissible range [0.5, 0.75]")]
    AlphaOutOfRange { alpha: f64 },

    /// A row with zero score cannot serve as a standalone sampling distribution.
    #[error("row {index} has zero {kind} score; it cannot carry positive sampling probability")]
    ZeroProbabilityEntry { index: usize, kind: &'static str },

    /// The proposal distribution fails the dominance hypothesis
    /// `q_i >= 0.5 * l_i / d` required by the bottom-up volume sampler.
    #[error(
        "proposal distribution violates dominance at row {index}: q = {q:.6e} < 0.5 * leverage/d = {required:.6e}"
    )]
    PreconditionViolated { index: usize, q: f64, required: f64 },

    #[error("rejection sampling exhausted the trial budget of {max_trials}")]
    TrialBudgetExhausted { max_trials: u64 },

    #[error("sample size k = {k} is smaller than the dimension d = {d}")]
    KTooSmall { k: usize, d: usize },

    #[error("enumeration of {count} sequences exceeds the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    /// The sketched system lost rank; volume-sampled sequences never do.
    #[error("sketched matrix is rank deficient (smallest singular value {sigma_min:.3e})")]
    SketchRankDeficient { sigma_min: f64 },

    #[error("no response supplied for sampled row {index}")]
    MissingResponse { index: usize },

    #[error("cannot average an empty list of estimates")]
    EmptyList,

    #[error("response model dimension mismatch: {context}")]
    ModelDimensionMismatch { context: &'static str },

    /// The fixed response lies in the column span, so the optimum loss is zero
    /// and the loss ratio is undefined.
    #[error("fixed response vector lies in the column span of the design matrix")]
    ResponseInColumnSpan,
}

pub type Result<T> = std::result::Result<T, Error>;
