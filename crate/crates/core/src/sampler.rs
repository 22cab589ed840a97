//! Volume sampling and its rescaled composition with i.i.d. sampling.
//!
//! The size-d volume sampler draws a set of rows with probability
//! proportional to the squared volume they span, `det(X_S)^2`, using
//! bottom-up rejection sampling: propose a row from `q`, accept with
//! probability `x^T A_i x / (2 d q)`, and after each acceptance downdate
//! `A_{i+1} = A_i - A_i x x^T A_i / (x^T A_i x)` so that already-covered
//! directions stop being accepted. Acceptance is a valid probability
//! whenever `q_i >= 0.5 * l_i / d` for every row, and the expected number
//! of rejection trials is at most `2 d (ln d + 1)`.
//!
//! A length-k rescaled sample is the volume sample plus `k - d` i.i.d.
//! draws from `q`, shuffled uniformly; row t carries the rescaling weight
//! `1 / sqrt(k q_{pi_t})`. The exact law over index sequences is
//!
//! ```text
//! Pr(pi) = det(X^T S^T S X) / ((d!/k^d) C(k,d) det(X^T X)) * prod_t q_{pi_t}
//! ```
//!
//! which [`brute_force_vs_probs`] enumerates directly at desk scale to serve
//! as the correctness oracle for the samplers.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::{factorize, DesignMatrix, GramFactor, DEFAULT_RANK_TOL};
use crate::scores::SamplingDistribution;

/// Relative tolerance on the stagewise trace identity
/// `sum_j x_j^T A_{i+1} x_j = d - i`.
pub const TRACE_IDENTITY_TOL: f64 = 1e-6;

/// Hard cap on the number of sequences the brute-force oracle enumerates.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// A reproducible random stream: identical `(master_seed, stream_id)` pairs
/// yield identical draw sequences, and distinct stream ids are independent,
/// so concurrent workers can each own a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// The concrete generator type used by all samplers.
pub type StreamRng = ChaCha12Rng;

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// An index sequence `pi` with its rescaling weights `1 / sqrt(k q_{pi_t})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSequence {
    indices: Vec<usize>,
    rescale: Vec<f64>,
    n: usize,
    source_q: SamplingDistribution,
}

impl DesignSequence {
    /// Attaches rescaling weights from `q` to an index sequence.
    pub fn from_indices(
        indices: Vec<usize>,
        source_q: SamplingDistribution,
        n: usize,
    ) -> Result<Self> {
        let k = indices.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad,
                context: "sequence index out of range",
            });
        }
        if source_q.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: source_q.n(),
                context: "sampling distribution length",
            });
        }
        let rescale = indices
            .iter()
            .map(|&i| 1.0 / (k as f64 * source_q.probs()[i]).sqrt())
            .collect();
        Ok(Self {
            indices,
            rescale,
            n,
            source_q,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn rescale(&self) -> &[f64] {
        &self.rescale
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn source_q(&self) -> &SamplingDistribution {
        &self.source_q
    }

    /// Occurrence counts of every row index in the sequence.
    pub fn multiplicities(&self) -> Vec<u64> {
        multiplicity_counts(&self.indices, self.n)
    }

    /// The distinct rows touched by the sequence, sorted.
    pub fn support(&self) -> Vec<usize> {
        let mut s = self.indices.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Counters describing one sampling run.
#[derive(Debug, Clone, Default)]
pub struct SamplerStats {
    /// Accept/reject trials performed by the volume sampler.
    pub bernoulli_trials: u64,
    /// Draws consumed from the proposal distribution, including the
    /// i.i.d. tail of a size-k sample.
    pub iid_draws_consumed: u64,
    /// Relative deviations from the stagewise trace identity, one entry per
    /// accepted row. Populated by [`sample_vs_d_checked`]; plain
    /// [`sample_vs_d`] records them only in debug builds.
    pub stage_trace_residuals: Vec<f64>,
}

/// Default rejection budget: roughly 32x the expected trial count, so
/// exhausting it signals a software fault rather than bad luck.
pub fn default_max_trials(d: usize) -> u64 {
    (64.0 * d as f64 * ((d as f64).ln() + 2.0)).ceil() as u64
}

/// Draws a size-d volume sample: `Pr(pi) = det(X_pi)^2 / (d! det(X^T X))`.
///
/// Requires `q_i >= 0.5 * l_i / d` for every row (checked eagerly), which
/// makes every acceptance argument a valid probability.
pub fn sample_vs_d(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    rng: &mut StreamRng,
    max_trials: u64,
) -> Result<(DesignSequence, SamplerStats)> {
    sample_vs_d_impl(x, factor, q, rng, max_trials, cfg!(debug_assertions))
}

/// Same as [`sample_vs_d`] but always records the stagewise trace residuals
/// in [`SamplerStats::stage_trace_residuals`], independent of build profile.
pub fn sample_vs_d_checked(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    rng: &mut StreamRng,
    max_trials: u64,
) -> Result<(DesignSequence, SamplerStats)> {
    sample_vs_d_impl(x, factor, q, rng, max_trials, true)
}

fn sample_vs_d_impl(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    rng: &mut StreamRng,
    max_trials: u64,
    check_trace: bool,
) -> Result<(DesignSequence, SamplerStats)> {
    let (n, d) = (x.n(), x.d());
    if q.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.n(),
            context: "sampling distribution length",
        });
    }
    check_dominance(x, factor, q)?;

    let mut a = factor.gram_inverse().clone();
    let mut indices = Vec::with_capacity(d);
    let mut stats = SamplerStats::default();

    for stage in 0..d {
        let accepted = loop {
            if stats.bernoulli_trials >= max_trials {
                return Err(Error::TrialBudgetExhausted { max_trials });
            }
            stats.bernoulli_trials += 1;
            stats.iid_draws_consumed += 1;
            let idx = q.index_from_uniform(rng.random::<f64>());
            let xi = x.row_vector(idx);
            let quad = (xi.transpose() * &a * &xi)[(0, 0)];
            let p = quad / (2.0 * d as f64 * q.probs()[idx]);
            // Valid Bernoulli argument under the dominance precondition.
            assert!(
                (-1e-12..=1.0 + 1e-9).contains(&p),
                "acceptance argument {p} outside [0, 1] at row {idx}"
            );
            if rng.random::<f64>() < p {
                break idx;
            }
        };

        let xi = x.row_vector(accepted);
        let ax = &a * &xi;
        let denom = xi.dot(&ax);
        a -= &ax * ax.transpose() / denom;
        // Resymmetrize: drift over d sequential downdates otherwise breaks
        // the trace identity.
        let at = a.transpose();
        a += at;
        a *= 0.5;
        indices.push(accepted);

        if check_trace {
            let target = (d - stage - 1) as f64;
            let m = x.entries() * &a;
            let mut total = 0.0;
            for j in 0..n {
                total += m.row(j).dot(&x.entries().row(j));
            }
            let residual = (total - target).abs() / target.max(1.0);
            debug_assert!(
                residual <= TRACE_IDENTITY_TOL,
                "trace identity violated at stage {stage}: sum = {total}, target = {target}"
            );
            stats.stage_trace_residuals.push(residual);
        }
    }

    let seq = DesignSequence::from_indices(indices, q.clone(), n)?;
    Ok((seq, stats))
}

fn check_dominance(x: &DesignMatrix, factor: &GramFactor, q: &SamplingDistribution) -> Result<()> {
    let d = x.d() as f64;
    let b = x.entries() * factor.gram_inverse();
    for i in 0..x.n() {
        let leverage = b.row(i).dot(&x.entries().row(i));
        let required = 0.5 * leverage / d;
        if q.probs()[i] < required * (1.0 - 1e-9) {
            return Err(Error::PreconditionViolated {
                index: i,
                q: q.probs()[i],
                required,
            });
        }
    }
    Ok(())
}

/// `m` independent draws from `q` by inverse CDF on its precomputed
/// cumulative table. Consumes exactly `m` uniforms from the stream.
pub fn sample_iid(q: &SamplingDistribution, m: usize, rng: &mut StreamRng) -> Vec<usize> {
    (0..m)
        .map(|_| q.index_from_uniform(rng.random::<f64>()))
        .collect()
}

/// Draws a length-k rescaled volume sample: a size-d volume sample plus
/// `k - d` i.i.d. draws from `q`, shuffled by a uniformly random
/// permutation.
pub fn sample_vs_k(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    k: usize,
    rng: &mut StreamRng,
) -> Result<(DesignSequence, SamplerStats)> {
    let d = x.d();
    if k < d {
        return Err(Error::KTooSmall { k, d });
    }
    let (volume_part, mut stats) = sample_vs_d(x, factor, q, rng, default_max_trials(d))?;
    let mut combined = volume_part.indices().to_vec();
    combined.extend(sample_iid(q, k - d, rng));
    stats.iid_draws_consumed += (k - d) as u64;
    shuffle(&mut combined, rng);
    let seq = DesignSequence::from_indices(combined, q.clone(), x.n())?;
    Ok((seq, stats))
}

/// Fisher-Yates shuffle consuming exactly `len - 1` uniforms, so the
/// stream position after a sample is a deterministic function of `k`.
fn shuffle(items: &mut [usize], rng: &mut StreamRng) {
    for i in (1..items.len()).rev() {
        let u = rng.random::<f64>();
        let j = ((u * (i + 1) as f64) as usize).min(i);
        items.swap(i, j);
    }
}

/// Enumerates the exact rescaled volume sampling law over all `n^k`
/// sequences. Rank-deficient selections contribute zero mass; determinants
/// accumulate in log space to avoid underflow.
pub fn brute_force_vs_probs(
    x: &DesignMatrix,
    q: &SamplingDistribution,
    k: usize,
) -> Result<BTreeMap<Vec<usize>, f64>> {
    let (n, d) = (x.n(), x.d());
    if k < d {
        return Err(Error::KTooSmall { k, d });
    }
    let count = (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let factor = factorize(x, DEFAULT_RANK_TOL)?;

    // log of the normalizer (d!/k^d) C(k,d) det(X^T X).
    let log_d_fact: f64 = (2..=d).map(|i| (i as f64).ln()).sum();
    let log_binom: f64 = (0..d)
        .map(|i| ((k - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum();
    let log_norm = log_d_fact - d as f64 * (k as f64).ln() + log_binom + factor.log_det_gram();

    let log_q: Vec<f64> = q.probs().iter().map(|&p| p.ln()).collect();
    let mut probs = BTreeMap::new();
    let mut seq = vec![0usize; k];
    loop {
        if let Some(log_det) = sketched_gram_log_det(x, q, &seq) {
            let log_mass: f64 = log_det + seq.iter().map(|&i| log_q[i]).sum::<f64>() - log_norm;
            let p = log_mass.exp();
            if p > 0.0 {
                probs.insert(seq.clone(), p);
            }
        }
        // Odometer over [n]^k.
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(probs);
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < n {
                break;
            }
            seq[pos] = 0;
        }
    }
}

/// `log det(X^T S^T S X)` for the rescaled selection, or `None` when the
/// selected rows do not span.
fn sketched_gram_log_det(x: &DesignMatrix, q: &SamplingDistribution, seq: &[usize]) -> Option<f64> {
    let d = x.d();
    let k = seq.len();
    let mut gram = DMatrix::zeros(d, d);
    for &i in seq {
        let xi = x.row_vector(i);
        let w = 1.0 / (k as f64 * q.probs()[i]);
        gram += &xi * xi.transpose() * w;
    }
    let chol = Cholesky::new(gram)?;
    let log_det = 2.0 * (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    log_det.is_finite().then_some(log_det)
}

/// Occurrence counts: `s_i = |{t : pi_t = i}|`.
pub fn multiplicity_counts(indices: &[usize], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    for &i in indices {
        counts[i] += 1;
    }
    counts
}
