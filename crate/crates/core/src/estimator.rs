//! Rescaled selection operators and unbiased subsampled least squares.
//!
//! A design sequence `pi` of length k induces the selection operator
//! `S_pi` whose t-th row is `e_{pi_t}^T / sqrt(k q_{pi_t})`. The subsampled
//! estimator `w_hat = (S_pi X)^+ S_pi y` is unbiased over rescaled volume
//! sampling: `E[(S_pi X)^+ S_pi] = X^+`. Repeated indices reuse the same
//! response with their own rescaling weights, so the estimator depends on
//! the multiplicities of the sequence, not just the selected set.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{DesignMatrix, Weights};
use crate::sampler::DesignSequence;

/// Responses keyed by row index; the query budget is the support of the
/// sequence, and multiplicities are expanded at solve time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectedResponses {
    values: BTreeMap<usize, f64>,
}

impl SelectedResponses {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            values: pairs.into_iter().collect(),
        }
    }

    /// Queries the full response vector at the support of the sequence.
    pub fn from_design(seq: &DesignSequence, y: &DVector<f64>) -> Result<Self> {
        if y.len() != seq.n() {
            return Err(Error::DimensionMismatch {
                expected: seq.n(),
                got: y.len(),
                context: "response vector length",
            });
        }
        Ok(Self::from_pairs(
            seq.support().into_iter().map(|i| (i, y[i])),
        ))
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.values.get(&index).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&i, &v)| (i, v))
    }
}

/// A subsampled least-squares estimate with its design sequence and the
/// smallest singular value of the sketched matrix.
#[derive(Debug, Clone)]
pub struct SubsampledEstimate {
    pub w_hat: Weights,
    pub sequence: DesignSequence,
    pub condition_report: f64,
}

/// Applies the rescaled selection operator to a matrix with n rows:
/// row t of the output is `M_{pi_t} / sqrt(k q_{pi_t})`.
pub fn apply_sketch(seq: &DesignSequence, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != seq.n() {
        return Err(Error::DimensionMismatch {
            expected: seq.n(),
            got: m.nrows(),
            context: "sketch input row count",
        });
    }
    let k = seq.k();
    let mut out = DMatrix::zeros(k, m.ncols());
    for (t, &i) in seq.indices().iter().enumerate() {
        let w = seq.rescale()[t];
        for c in 0..m.ncols() {
            out[(t, c)] = m[(i, c)] * w;
        }
    }
    Ok(out)
}

/// Vector counterpart of [`apply_sketch`].
pub fn apply_sketch_vector(seq: &DesignSequence, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != seq.n() {
        return Err(Error::DimensionMismatch {
            expected: seq.n(),
            got: v.len(),
            context: "sketch input length",
        });
    }
    Ok(DVector::from_fn(seq.k(), |t, _| {
        v[seq.indices()[t]] * seq.rescale()[t]
    }))
}

/// Solves the sketched system `w_hat = (S_pi X)^+ (S_pi y)` by orthogonal
/// factorization of the k x d sketched matrix.
pub fn subsampled_ls(
    x: &DesignMatrix,
    seq: &DesignSequence,
    responses: &SelectedResponses,
) -> Result<SubsampledEstimate> {
    if seq.n() != x.n() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            got: seq.n(),
            context: "sequence built for a different matrix",
        });
    }
    let (k, d) = (seq.k(), x.d());
    if k < d {
        return Err(Error::SketchRankDeficient { sigma_min: 0.0 });
    }

    let sx = apply_sketch(seq, x.entries())?;
    let mut sy = DVector::zeros(k);
    for (t, &i) in seq.indices().iter().enumerate() {
        let y_i = responses
            .get(i)
            .ok_or(Error::MissingResponse { index: i })?;
        sy[t] = y_i * seq.rescale()[t];
    }

    let svals = sx.clone().singular_values();
    let sigma_max = svals.iter().fold(0.0_f64, |a, &s| a.max(s));
    let sigma_min = svals.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    // Defensive: sequences drawn from volume sampling always span. NaN
    // singular values fall into the error path.
    let spans = sigma_min > 1e-12 * sigma_max;
    if !spans || sigma_max == 0.0 {
        return Err(Error::SketchRankDeficient { sigma_min });
    }

    let qr = sx.qr();
    let qty = qr.q().transpose() * sy;
    let w = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::SketchRankDeficient { sigma_min })?;

    Ok(SubsampledEstimate {
        w_hat: Weights(w),
        sequence: seq.clone(),
        condition_report: sigma_min,
    })
}

/// Coordinate-wise mean of independently drawn estimates.
pub fn averaged_estimate(estimates: &[SubsampledEstimate]) -> Result<Weights> {
    let first = estimates.first().ok_or(Error::EmptyList)?;
    let d = first.w_hat.len();
    let mut mean = DVector::zeros(d);
    for e in estimates {
        if e.w_hat.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: e.w_hat.len(),
                context: "averaging estimates of mixed dimension",
            });
        }
        mean += e.w_hat.vector();
    }
    mean /= estimates.len() as f64;
    Ok(Weights(mean))
}
