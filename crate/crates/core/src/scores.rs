//! Leverage scores, inverse scores, and the sampling distributions built
//! from them.
//!
//! For a full-rank design matrix the i-th leverage score is
//! `l_i = x_i^T (X^T X)^{-1} x_i` and the i-th inverse score is
//! `v_i = x_i^T (X^T X)^{-2} x_i`. Leverage scores sum to `d`; inverse
//! scores sum to `phi = tr((X^T X)^{-1})`. The mixture distribution
//! `q(alpha) = alpha * (0.5 uniform + 0.5 inverse) + (1 - alpha) * leverage`
//! keeps every component at weight >= 0.25 for `alpha` in [0.5, 0.75], which
//! gives each row a strictly positive probability and the dominance the
//! volume sampler relies on.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{DesignMatrix, GramFactor};

/// Relative threshold under which a score is treated as exactly zero when
/// used as a standalone sampling probability.
const ZERO_SCORE_REL_TOL: f64 = 1e-12;

/// Per-row leverage scores, inverse scores, and `phi = tr((X^T X)^{-1})`.
#[derive(Debug, Clone)]
pub struct ScoreProfile {
    leverage: DVector<f64>,
    inverse: DVector<f64>,
    phi: f64,
}

impl ScoreProfile {
    pub fn leverage(&self) -> &DVector<f64> {
        &self.leverage
    }

    pub fn inverse(&self) -> &DVector<f64> {
        &self.inverse
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn n(&self) -> usize {
        self.leverage.len()
    }
}

/// The standalone sampling families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Uniform,
    Leverage,
    Inverse,
}

/// A discrete distribution over rows with a precomputed cumulative table
/// for inverse-CDF sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    q: DVector<f64>,
    alpha: Option<f64>,
    cumulative: Vec<f64>,
}

impl SamplingDistribution {
    /// Wraps explicit probabilities. Entries must be non-negative and sum to
    /// one within 1e-9; strict positivity is enforced by the samplers that
    /// need it, so point masses remain constructible for testing.
    pub fn from_probs(q: Vec<f64>) -> Result<Self> {
        let total: f64 = q.iter().sum();
        let non_negative = |p: f64| p >= 0.0;
        if q.iter().any(|&p| !non_negative(p)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
                context: "probabilities must be non-negative and sum to one",
            });
        }
        Ok(Self::from_vector(DVector::from_vec(q), None))
    }

    fn from_vector(q: DVector<f64>, alpha: Option<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(q.len());
        let mut acc = 0.0;
        for &p in q.iter() {
            acc += p;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            q,
            alpha,
            cumulative,
        }
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Index drawn by inverse CDF from a uniform variate in [0, 1).
    pub(crate) fn index_from_uniform(&self, u: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.q.len() - 1)
    }
}

/// Computes leverage scores, inverse scores, and phi.
///
/// Leverage comes from row norms of the orthonormal factor; inverse scores
/// are row norms of `X (X^T X)^{-1}`, applying the Gram inverse once rather
/// than forming its square.
pub fn compute_scores(x: &DesignMatrix, factor: &GramFactor) -> Result<ScoreProfile> {
    if x.n() != factor.n() || x.d() != factor.d() {
        return Err(Error::DimensionMismatch {
            expected: factor.n(),
            got: x.n(),
            context: "factor does not match design matrix",
        });
    }
    let q = factor.orthonormal_factor();
    let leverage = DVector::from_fn(x.n(), |i, _| q.row(i).norm_squared());
    let b = x.entries() * factor.gram_inverse();
    let inverse = DVector::from_fn(x.n(), |i, _| b.row(i).norm_squared());
    let phi = factor.gram_inverse().trace();
    Ok(ScoreProfile {
        leverage,
        inverse,
        phi,
    })
}

/// The mixture distribution
/// `q_i = alpha * (0.5/n + 0.5 * v_i/phi) + (1 - alpha) * l_i/d`
/// for `alpha` in [0.5, 0.75].
pub fn mixture_distribution(
    scores: &ScoreProfile,
    n: usize,
    d: usize,
    alpha: f64,
) -> Result<SamplingDistribution> {
    if !(0.5..=0.75).contains(&alpha) {
        return Err(Error::AlphaOutOfRange { alpha });
    }
    if scores.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: scores.n(),
            context: "score profile length",
        });
    }
    let uniform = 1.0 / n as f64;
    let q = DVector::from_fn(n, |i, _| {
        alpha * (0.5 * uniform + 0.5 * scores.inverse[i] / scores.phi)
            + (1.0 - alpha) * scores.leverage[i] / d as f64
    });
    Ok(SamplingDistribution::from_vector(q, Some(alpha)))
}

/// One of the pure sampling families: uniform, leverage, or inverse.
///
/// For the score-based kinds a row whose score vanishes cannot carry
/// positive probability, which the rescaled sampling law requires, so it is
/// an error rather than a silently degenerate distribution.
pub fn pure_distribution(
    scores: &ScoreProfile,
    n: usize,
    d: usize,
    kind: ScoreKind,
) -> Result<SamplingDistribution> {
    if scores.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: scores.n(),
            context: "score profile length",
        });
    }
    let q = match kind {
        ScoreKind::Uniform => DVector::from_element(n, 1.0 / n as f64),
        ScoreKind::Leverage => {
            check_positive(&scores.leverage, "leverage")?;
            scores.leverage.clone() / d as f64
        }
        ScoreKind::Inverse => {
            check_positive(&scores.inverse, "inverse")?;
            scores.inverse.clone() / scores.phi
        }
    };
    Ok(SamplingDistribution::from_vector(q, None))
}

fn check_positive(scores: &DVector<f64>, kind: &'static str) -> Result<()> {
    let max = scores.iter().fold(0.0_f64, |a, &s| a.max(s));
    for (index, &s) in scores.iter().enumerate() {
        if s <= ZERO_SCORE_REL_TOL * max {
            return Err(Error::ZeroProbabilityEntry { index, kind });
        }
    }
    Ok(())
}
