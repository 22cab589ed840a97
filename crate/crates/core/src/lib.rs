//! Randomized experimental design for linear regression.
//!
//! Given a tall full-rank design matrix, the crate draws small row designs
//! whose subsampled least-squares estimates are unbiased for the full
//! solution: a size-d volume sample (row sets weighted by the squared
//! volume they span) joined with i.i.d. draws from a score-based proposal
//! distribution, rescaled so that `E[(S X)^+ S] = X^+`. A Monte Carlo
//! harness verifies the expectation identities and error bounds behind the
//! construction at desk scale.
//!
//! Module map:
//! - [`linalg`]: design-matrix factorization, least squares, whitening;
//! - [`scores`]: leverage and inverse scores, sampling distributions;
//! - [`sampler`]: volume sampling, rescaled composition, brute-force oracle;
//! - [`estimator`]: sketch operators and subsampled least squares;
//! - [`harness`]: response models, metric estimators, verification battery.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod sampler;
pub mod scores;

pub use error::{Error, Result};
pub use estimator::{
    apply_sketch, apply_sketch_vector, averaged_estimate, subsampled_ls, SelectedResponses,
    SubsampledEstimate,
};
pub use harness::{
    aopt_trace, check_marginals, estimate_loss_ratio, estimate_mse_excess, estimate_mspe_excess,
    generate_response, noise_second_moment, run_verification, CheckResult, CheckStatus, EvalReport,
    KahanSum, McConfig, MetricEstimate, ResponseModel,
};
pub use linalg::{
    factorize, least_squares, residual, whiten, DesignMatrix, GramFactor, Weights, DEFAULT_RANK_TOL,
};
pub use sampler::{
    brute_force_vs_probs, default_max_trials, multiplicity_counts, sample_iid, sample_vs_d,
    sample_vs_d_checked, sample_vs_k, DesignSequence, RngStream, SamplerStats, StreamRng,
};
pub use scores::{
    compute_scores, mixture_distribution, pure_distribution, SamplingDistribution, ScoreKind,
    ScoreProfile,
};

/// Re-export of the underlying linear algebra crate for downstream callers.
pub use nalgebra;
