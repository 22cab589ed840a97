//! Response-model generators and Monte Carlo verification of the sampling
//! and estimation identities.
//!
//! Every estimator here is a deterministic function of `(master_seed,
//! config)`: trials are independent work units keyed by stream id, partial
//! results are collected in trial order, and reductions use compensated
//! summation, so the reported numbers do not depend on the worker count.
//!
//! The theoretical guarantees come with unspecified constants, so the
//! verification battery targets exact identities, oracle equivalence, and
//! monotone trends: bound checks use a uniform 3-standard-error slack
//! rather than absolute constants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{subsampled_ls, SelectedResponses};
use crate::linalg::{
    factorize, least_squares, whiten, DesignMatrix, GramFactor, Weights, DEFAULT_RANK_TOL,
};
use crate::sampler::{
    default_max_trials, sample_vs_d, sample_vs_d_checked, sample_vs_k, RngStream, StreamRng,
    TRACE_IDENTITY_TOL,
};
use crate::scores::{compute_scores, mixture_distribution, SamplingDistribution};

// Disjoint stream-id blocks so independent estimators never share draws.
const STREAM_MSE: u64 = 1 << 32;
const STREAM_MSPE: u64 = 2 << 32;
const STREAM_LOSS: u64 = 3 << 32;
const STREAM_MARGINALS: u64 = 4 << 32;
const STREAM_PINV: u64 = 5 << 32;
const STREAM_INV_MOMENT: u64 = 6 << 32;
const STREAM_TRACE: u64 = 7 << 32;
const STREAM_BUDGET: u64 = 8 << 32;
const STREAM_UNBIASED: u64 = 9 << 32;
const STREAM_AOPT: u64 = 10 << 32;
const STREAM_LOSS_INDEP: u64 = 11 << 32;
const STREAM_PSD: u64 = 12 << 32;

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl MetricEstimate {
    /// Mean and standard error of the mean, with compensated accumulation.
    pub fn from_samples(samples: &[f64]) -> Self {
        let t = samples.len() as f64;
        if samples.is_empty() {
            return Self {
                value: 0.0,
                std_error: 0.0,
                trials: 0,
            };
        }
        let mut sum = KahanSum::default();
        for &v in samples {
            sum.add(v);
        }
        let mean = sum.value() / t;
        let mut sq = KahanSum::default();
        for &v in samples {
            sq.add((v - mean) * (v - mean));
        }
        let variance = if samples.len() > 1 {
            sq.value() / (t - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (variance / t).sqrt(),
            trials: samples.len() as u64,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            std_error: self.std_error * factor.abs(),
            trials: self.trials,
        }
    }
}

/// How the hidden responses are produced.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseModel {
    /// `y = X w* + xi`, `xi_i` i.i.d. normal with a common variance.
    Homoscedastic { w_star: Vec<f64>, sigma: f64 },
    /// `y = X w* + xi`, `xi_i` independent normal with per-row variances.
    Heteroscedastic { w_star: Vec<f64>, sigmas: Vec<f64> },
    /// `w` drawn from a normal prior around `prior_mean`, then
    /// `y = X w + z` with homoscedastic noise; the target is the realized `w`.
    Bayesian {
        prior_mean: Vec<f64>,
        prior_scale: f64,
        sigma: f64,
    },
    /// An arbitrary fixed response vector; the target is `X^+ y`.
    Fixed { y: Vec<f64> },
}

impl ResponseModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Homoscedastic { .. } => "homoscedastic",
            Self::Heteroscedastic { .. } => "heteroscedastic",
            Self::Bayesian { .. } => "bayesian",
            Self::Fixed { .. } => "fixed",
        }
    }

    pub fn validate(&self, x: &DesignMatrix) -> Result<()> {
        let check_w = |w: &Vec<f64>| {
            (w.len() == x.d())
                .then_some(())
                .ok_or(Error::ModelDimensionMismatch {
                    context: "weight vector length must equal d",
                })
        };
        match self {
            Self::Homoscedastic { w_star, sigma } => {
                check_w(w_star)?;
                non_negative(*sigma)
            }
            Self::Heteroscedastic { w_star, sigmas } => {
                check_w(w_star)?;
                if sigmas.len() != x.n() {
                    return Err(Error::ModelDimensionMismatch {
                        context: "sigma list length must equal n",
                    });
                }
                sigmas.iter().try_for_each(|&s| non_negative(s))
            }
            Self::Bayesian {
                prior_mean,
                prior_scale,
                sigma,
            } => {
                check_w(prior_mean)?;
                non_negative(*prior_scale)?;
                non_negative(*sigma)
            }
            Self::Fixed { y } => {
                (y.len() == x.n())
                    .then_some(())
                    .ok_or(Error::ModelDimensionMismatch {
                        context: "fixed response length must equal n",
                    })
            }
        }
    }
}

fn non_negative(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::ModelDimensionMismatch {
            context: "noise scale must be finite and non-negative",
        })
    }
}

/// Draws one response vector and the ground-truth weights the estimators
/// are judged against.
pub fn generate_response(
    model: &ResponseModel,
    x: &DesignMatrix,
    factor: &GramFactor,
    rng: &mut StreamRng,
) -> Result<(DVector<f64>, Weights)> {
    model.validate(x)?;
    match model {
        ResponseModel::Homoscedastic { w_star, sigma } => {
            let w = DVector::from_row_slice(w_star);
            let mut y = x.entries() * &w;
            for i in 0..y.len() {
                y[i] += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            Ok((y, Weights(w)))
        }
        ResponseModel::Heteroscedastic { w_star, sigmas } => {
            let w = DVector::from_row_slice(w_star);
            let mut y = x.entries() * &w;
            for i in 0..y.len() {
                y[i] += sigmas[i] * rng.sample::<f64, _>(StandardNormal);
            }
            Ok((y, Weights(w)))
        }
        ResponseModel::Bayesian {
            prior_mean,
            prior_scale,
            sigma,
        } => {
            let mut w = DVector::from_row_slice(prior_mean);
            for i in 0..w.len() {
                w[i] += prior_scale * rng.sample::<f64, _>(StandardNormal);
            }
            let mut y = x.entries() * &w;
            for i in 0..y.len() {
                y[i] += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            Ok((y, Weights(w)))
        }
        ResponseModel::Fixed { y } => {
            let y = DVector::from_row_slice(y);
            let w = least_squares(factor, x, &y)?;
            Ok((y, w))
        }
    }
}

/// Analytic second moment of the noise `xi = X w* - y` for the model, used
/// to normalize ratio estimates.
pub fn noise_second_moment(
    model: &ResponseModel,
    x: &DesignMatrix,
    factor: &GramFactor,
) -> Result<f64> {
    model.validate(x)?;
    Ok(match model {
        ResponseModel::Homoscedastic { sigma, .. } => x.n() as f64 * sigma * sigma,
        ResponseModel::Heteroscedastic { sigmas, .. } => sigmas.iter().map(|s| s * s).sum(),
        ResponseModel::Bayesian {
            prior_scale, sigma, ..
        } => prior_scale * prior_scale * x.entries().norm_squared() + x.n() as f64 * sigma * sigma,
        ResponseModel::Fixed { y } => {
            let y = DVector::from_row_slice(y);
            let w = least_squares(factor, x, &y)?;
            (x.entries() * w.vector() - y).norm_squared()
        }
    })
}

/// Monte Carlo configuration shared by the harness estimators.
#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    pub k: usize,
    pub alpha: f64,
    pub trials: u64,
    pub master_seed: u64,
}

fn run_trials<T, F>(trials: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..trials).into_par_iter().map(f).collect()
}

fn mixture_for(x: &DesignMatrix, factor: &GramFactor, alpha: f64) -> Result<SamplingDistribution> {
    let scores = compute_scores(x, factor)?;
    mixture_distribution(&scores, x.n(), x.d(), alpha)
}

/// Excess mean squared error of the subsampled estimator over the full
/// least-squares estimator, paired per trial.
pub fn estimate_mse_excess(
    x: &DesignMatrix,
    factor: &GramFactor,
    model: &ResponseModel,
    cfg: &McConfig,
) -> Result<MetricEstimate> {
    let q = mixture_for(x, factor, cfg.alpha)?;
    let samples = run_trials(cfg.trials, |t| {
        let mut rng = RngStream::new(cfg.master_seed, STREAM_MSE + t).rng();
        let (y, truth) = generate_response(model, x, factor, &mut rng)?;
        let w_ls = least_squares(factor, x, &y)?;
        let (seq, _) = sample_vs_k(x, factor, &q, cfg.k, &mut rng)?;
        let responses = SelectedResponses::from_design(&seq, &y)?;
        let est = subsampled_ls(x, &seq, &responses)?;
        let a = (est.w_hat.vector() - truth.vector()).norm_squared();
        let b = (w_ls.vector() - truth.vector()).norm_squared();
        Ok(a - b)
    })?;
    Ok(MetricEstimate::from_samples(&samples))
}

/// Excess mean squared prediction error, computed through the whitening
/// reduction: estimation runs on `U = X (X^T X)^{-1/2}`, where parameter
/// error equals prediction error on the original matrix.
#[derive(Debug, Clone, Serialize)]
pub struct MspeReport {
    pub excess: MetricEstimate,
    /// Largest relative gap between `||X(w_hat - w*)||^2` and
    /// `||U(v_hat - v*)||^2` over the cross-checked draws.
    pub crosscheck_max_rel: f64,
    pub crosscheck_draws: u64,
}

pub fn estimate_mspe_excess(
    x: &DesignMatrix,
    factor: &GramFactor,
    model: &ResponseModel,
    cfg: &McConfig,
) -> Result<MspeReport> {
    let u = whiten(x, factor)?;
    let fu = factorize(&u, DEFAULT_RANK_TOL)?;
    let q = mixture_for(&u, &fu, cfg.alpha)?;
    let crosscheck_draws = cfg.trials.min(100);

    let results = run_trials(cfg.trials, |t| {
        let mut rng = RngStream::new(cfg.master_seed, STREAM_MSPE + t).rng();
        let (y, truth) = generate_response(model, x, factor, &mut rng)?;
        // The prediction target X w* equals U v* with v* = U^T X w*.
        let v_star = u.entries().transpose() * (x.entries() * truth.vector());
        let v_ls = least_squares(&fu, &u, &y)?;
        let (seq, _) = sample_vs_k(&u, &fu, &q, cfg.k, &mut rng)?;
        let responses = SelectedResponses::from_design(&seq, &y)?;
        let est = subsampled_ls(&u, &seq, &responses)?;
        let a = (est.w_hat.vector() - &v_star).norm_squared();
        let b = (v_ls.vector() - &v_star).norm_squared();

        let rel = if t < crosscheck_draws {
            // Same sequence and responses re-solved on the original matrix.
            // Draws that recover the least-squares solution leave both sides
            // at roundoff, so the scale floor keeps 0-vs-0 comparisons sane.
            let est_x = subsampled_ls(x, &seq, &responses)?;
            let pred_x = (x.entries() * (est_x.w_hat.vector() - truth.vector())).norm_squared();
            let denom = a.max(pred_x).max(f64::EPSILON * y.norm_squared());
            (pred_x - a).abs() / denom
        } else {
            0.0
        };
        Ok(((a - b), rel))
    })?;

    let samples: Vec<f64> = results.iter().map(|r| r.0).collect();
    let crosscheck_max_rel = results
        .iter()
        .take(crosscheck_draws as usize)
        .fold(0.0_f64, |acc, r| acc.max(r.1));
    Ok(MspeReport {
        excess: MetricEstimate::from_samples(&samples),
        crosscheck_max_rel,
        crosscheck_draws,
    })
}

/// Expected-loss diagnostics for a fixed response vector.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    /// `E[L(w_hat)] / L(w*)`.
    pub ratio: MetricEstimate,
    /// `E[L(w_hat)] - L(w*)` from the loss draws minus an independently
    /// estimated MSPE; unbiasedness drives this to zero. The per-draw
    /// difference is identically zero by the normal equations, so only
    /// independent draws make this a meaningful statistical check.
    pub identity_residual: MetricEstimate,
    /// MSPE estimated from its own stream of designs.
    pub mspe: MetricEstimate,
    /// Largest relative per-draw deviation from the exact decomposition
    /// `L(w_hat) = L(w*) + ||X(w_hat - w*)||^2`.
    pub pythagoras_max_rel: f64,
    pub optimum_loss: f64,
}

pub fn estimate_loss_ratio(
    x: &DesignMatrix,
    factor: &GramFactor,
    y: &DVector<f64>,
    cfg: &McConfig,
) -> Result<LossReport> {
    if y.len() != x.n() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            got: y.len(),
            context: "response vector length",
        });
    }
    let w_star = least_squares(factor, x, y)?;
    let res = x.entries() * w_star.vector() - y;
    let optimum_loss = res.norm_squared();
    if res.norm() <= 1e-10 * y.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::ResponseInColumnSpan);
    }
    let q = mixture_for(x, factor, cfg.alpha)?;

    let draw = |stream: u64| -> Result<(f64, f64)> {
        let mut rng = RngStream::new(cfg.master_seed, stream).rng();
        let (seq, _) = sample_vs_k(x, factor, &q, cfg.k, &mut rng)?;
        let responses = SelectedResponses::from_design(&seq, y)?;
        let est = subsampled_ls(x, &seq, &responses)?;
        let loss = (x.entries() * est.w_hat.vector() - y).norm_squared();
        let mspe = (x.entries() * (est.w_hat.vector() - w_star.vector())).norm_squared();
        Ok((loss, mspe))
    };

    let loss_draws = run_trials(cfg.trials, |t| draw(STREAM_LOSS + t))?;
    let indep_draws = run_trials(cfg.trials, |t| draw(STREAM_LOSS_INDEP + t))?;

    let losses: Vec<f64> = loss_draws.iter().map(|p| p.0).collect();
    let mspes: Vec<f64> = indep_draws.iter().map(|p| p.1).collect();
    let pythagoras_max_rel = loss_draws
        .iter()
        .map(|&(l, m)| (l - optimum_loss - m).abs() / l.max(optimum_loss))
        .fold(0.0_f64, f64::max);

    let loss_mean = MetricEstimate::from_samples(&losses);
    let mspe = MetricEstimate::from_samples(&mspes);
    let identity_residual = MetricEstimate {
        value: loss_mean.value - optimum_loss - mspe.value,
        std_error: (loss_mean.std_error.powi(2) + mspe.std_error.powi(2)).sqrt(),
        trials: cfg.trials,
    };

    Ok(LossReport {
        ratio: loss_mean.scaled(1.0 / optimum_loss),
        identity_residual,
        mspe,
        pythagoras_max_rel,
        optimum_loss,
    })
}

/// `tr((X_S^T X_S)^{-1})` for a subset of rows, from the subset's own
/// factorization.
pub fn aopt_trace(x: &DesignMatrix, subset: &[usize]) -> Result<f64> {
    let d = x.d();
    if subset.len() < d {
        return Err(Error::RankDeficient {
            sigma_min: 0.0,
            sigma_max: 0.0,
            tol: DEFAULT_RANK_TOL,
        });
    }
    let rows: Vec<Vec<f64>> = subset
        .iter()
        .map(|&i| x.entries().row(i).iter().copied().collect())
        .collect();
    let sub = DesignMatrix::from_rows(&rows)?;
    let f = factorize(&sub, DEFAULT_RANK_TOL)?;
    Ok(f.gram_inverse().trace())
}

/// Empirical multiplicity means and covariances against their closed forms
/// `E[s_i] = (k - d) q_i + l_i` and
/// `cov(s_i, s_j) = 1_{i=j} E[s_i] - (k - d) q_i q_j - l_ij^2`.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalReport {
    pub expected: Vec<f64>,
    pub empirical: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Largest |empirical - expected| / SE over rows.
    pub max_z: f64,
    /// Rows deviating by more than three standard errors.
    pub flagged: Vec<usize>,
    /// Largest covariance deviation in approximate standard errors.
    pub cov_max_z: f64,
    pub trials: u64,
}

pub fn check_marginals(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    k: usize,
    trials: u64,
    master_seed: u64,
) -> Result<MarginalReport> {
    let (n, d) = (x.n(), x.d());
    let scores = compute_scores(x, factor)?;
    let expected: Vec<f64> = (0..n)
        .map(|i| (k - d) as f64 * q.probs()[i] + scores.leverage()[i])
        .collect();

    let counts = run_trials(trials, |t| {
        let mut rng = RngStream::new(master_seed, STREAM_MARGINALS + t).rng();
        let (seq, _) = sample_vs_k(x, factor, q, k, &mut rng)?;
        Ok(seq.multiplicities())
    })?;

    let mut empirical = Vec::with_capacity(n);
    let mut std_error = Vec::with_capacity(n);
    let mut max_z = 0.0_f64;
    let mut flagged = Vec::new();
    let per_row: Vec<Vec<f64>> = (0..n)
        .map(|i| counts.iter().map(|c| c[i] as f64).collect())
        .collect();
    for (i, row) in per_row.iter().enumerate() {
        let est = MetricEstimate::from_samples(row);
        let z = if est.std_error > 0.0 {
            (est.value - expected[i]).abs() / est.std_error
        } else if (est.value - expected[i]).abs() < 1e-12 {
            0.0
        } else {
            f64::MAX
        };
        if z > 3.0 {
            flagged.push(i);
        }
        max_z = max_z.max(z);
        empirical.push(est.value);
        std_error.push(est.std_error);
    }

    // Covariance check with cross-leverage scores l_ij = x_i^T (X^T X)^{-1} x_j.
    let cross = x.entries() * factor.gram_inverse() * x.entries().transpose();
    let mut cov_max_z = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let expected_cov = if i == j { expected[i] } else { 0.0 }
                - (k - d) as f64 * q.probs()[i] * q.probs()[j]
                - cross[(i, j)] * cross[(i, j)];
            let products: Vec<f64> = counts.iter().map(|c| c[i] as f64 * c[j] as f64).collect();
            let prod = MetricEstimate::from_samples(&products);
            let emp_cov = prod.value - empirical[i] * empirical[j];
            // The product-term noise dominates the SE of the covariance.
            let z = if prod.std_error > 0.0 {
                (emp_cov - expected_cov).abs() / prod.std_error
            } else if (emp_cov - expected_cov).abs() < 1e-12 {
                0.0
            } else {
                f64::MAX
            };
            cov_max_z = cov_max_z.max(z);
        }
    }

    Ok(MarginalReport {
        expected,
        empirical,
        std_error,
        max_z,
        flagged,
        cov_max_z,
        trials,
    })
}

/// Outcome of one verification check.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
    pub observed: Option<f64>,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn gated(name: &'static str, observed: f64, threshold: f64, detail: String) -> Self {
        let status = if observed <= threshold {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            name,
            status,
            observed: Some(observed),
            threshold,
            detail,
        }
    }

    fn skipped(name: &'static str, threshold: f64, reason: String) -> Self {
        Self {
            name,
            status: CheckStatus::Skipped,
            observed: None,
            threshold,
            detail: reason,
        }
    }
}

/// Metric estimates included in every verification report; entries are
/// `None` when the corresponding input (for example a fixed response) is
/// missing, never absent from the schema.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub phi: f64,
    pub noise_second_moment: f64,
    pub mse_excess: MetricEstimate,
    pub mspe_excess: MetricEstimate,
    pub whiten_crosscheck_max_rel: f64,
    pub expected_loss_ratio: Option<MetricEstimate>,
    pub minimax_ratio: Option<MetricEstimate>,
    pub aopt_trace_mean: MetricEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub trials: u64,
    pub master_seed: u64,
    pub model: String,
}

/// The full verification report: config echo, metric estimates, and
/// pass/fail results for every identity and bound check.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub metrics: Metrics,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

impl EvalReport {
    pub fn failed_checks(&self) -> Vec<&CheckResult> {
        self.checks
            .iter()
            .filter(|c| matches!(c.status, CheckStatus::Fail))
            .collect()
    }
}

/// Runs the identity and bound battery for one design matrix and model.
pub fn run_verification(
    x: &DesignMatrix,
    factor: &GramFactor,
    model: &ResponseModel,
    cfg: &McConfig,
) -> Result<EvalReport> {
    model.validate(x)?;
    let (n, d, k) = (x.n(), x.d(), cfg.k);
    if k < d {
        return Err(Error::KTooSmall { k, d });
    }
    let scores = compute_scores(x, factor)?;
    let q = mixture_distribution(&scores, n, d, cfg.alpha)?;
    let mut checks = Vec::new();

    // Exact identities of the score profile.
    let sum_l: f64 = scores.leverage().iter().sum();
    let sum_v: f64 = scores.inverse().iter().sum();
    let rel =
        ((sum_l - d as f64).abs() / d as f64).max((sum_v - scores.phi()).abs() / scores.phi());
    checks.push(CheckResult::gated(
        "score-identities",
        rel,
        1e-8,
        format!("sum(l) = {sum_l}, sum(v) = {sum_v}, phi = {}", scores.phi()),
    ));

    // Mixture dominance: every component carries weight >= 0.25.
    let mut dominance_gap = 0.0_f64;
    for i in 0..n {
        for comp in [
            1.0 / n as f64,
            scores.leverage()[i] / d as f64,
            scores.inverse()[i] / scores.phi(),
        ] {
            dominance_gap = dominance_gap.max(0.25 * comp - q.probs()[i]);
        }
    }
    checks.push(CheckResult::gated(
        "mixture-dominance",
        dominance_gap,
        1e-12,
        "max over rows of 0.25 * component - q".to_string(),
    ));

    // Unbiasedness of the sketched pseudo-inverse, entrywise.
    let pinv_z = pseudo_inverse_unbiasedness_z(x, factor, &q, cfg)?;
    checks.push(CheckResult::gated(
        "unbiased-pseudoinverse",
        pinv_z,
        3.0,
        "max entrywise |mean - X^+| in standard errors".to_string(),
    ));

    // Multiplicity marginals.
    let marginals = check_marginals(x, factor, &q, k, cfg.trials, cfg.master_seed)?;
    checks.push(CheckResult::gated(
        "marginal-means",
        marginals.max_z,
        3.0,
        format!("flagged rows: {:?}", marginals.flagged),
    ));

    // Inverse moment bound on the sketched Gram matrix.
    let inv_moment = inverse_moment_margin(x, factor, &q, cfg)?;
    checks.push(CheckResult::gated(
        "inverse-moment",
        -inv_moment,
        1e-12,
        "negated smallest eigenvalue of bound + slack - mean".to_string(),
    ));

    // Stagewise trace identity of the volume sampler.
    let trace_runs = cfg.trials.min(1000);
    let trace_residual = trace_identity_max_residual(x, factor, &q, trace_runs, cfg.master_seed)?;
    checks.push(CheckResult::gated(
        "trace-identity",
        trace_residual,
        TRACE_IDENTITY_TOL,
        format!("max relative residual over {trace_runs} runs"),
    ));

    // Expected rejection trials stay near 2 d (ln d + 1).
    let budget_runs = cfg.trials.min(10_000);
    let mean_trials = mean_bernoulli_trials(x, factor, &q, budget_runs, cfg.master_seed)?;
    let budget_bound = 1.2 * 2.0 * d as f64 * ((d as f64).ln() + 1.0);
    checks.push(CheckResult::gated(
        "trial-budget",
        mean_trials,
        budget_bound,
        format!("mean rejection trials over {budget_runs} runs"),
    ));

    // Rescaled selections stay below the uniform-floor operator bound.
    let psd_runs = cfg.trials.min(1000);
    let psd_max = sketch_diag_max(x, factor, &q, k, psd_runs, cfg.master_seed)?;
    checks.push(CheckResult::gated(
        "sketch-psd-floor",
        psd_max,
        2.0 * n as f64 / cfg.alpha * (1.0 + 1e-12),
        format!("max diagonal of S^T S over {psd_runs} draws"),
    ));

    // Metric estimates.
    let mse = estimate_mse_excess(x, factor, model, cfg)?;
    let mspe = estimate_mspe_excess(x, factor, model, cfg)?;
    checks.push(CheckResult::gated(
        "whiten-crosscheck",
        mspe.crosscheck_max_rel,
        1e-8,
        format!("paired draws: {}", mspe.crosscheck_draws),
    ));

    // Unbiasedness of the estimator under the configured model.
    let unbiased_z = estimator_unbiasedness_z(x, factor, model, &q, cfg)?;
    checks.push(CheckResult::gated(
        "estimator-unbiased-mean",
        unbiased_z,
        3.0,
        "max coordinate |mean(w_hat) - mean(w_ls)| in standard errors".to_string(),
    ));

    let (loss_ratio, identity_residual, loss_detail) = match model {
        ResponseModel::Fixed { y } => {
            let y = DVector::from_row_slice(y);
            match estimate_loss_ratio(x, factor, &y, cfg) {
                Ok(report) => {
                    let z = if report.identity_residual.std_error > 0.0 {
                        report.identity_residual.value.abs() / report.identity_residual.std_error
                    } else {
                        0.0
                    };
                    (Some(report.ratio), Some((z, report)), None)
                }
                Err(Error::ResponseInColumnSpan) => (
                    None,
                    None,
                    Some("fixed response lies in the column span".to_string()),
                ),
                Err(e) => return Err(e),
            }
        }
        _ => (
            None,
            None,
            Some("loss ratio requires a fixed response".to_string()),
        ),
    };
    match &identity_residual {
        Some((z, _)) => checks.push(CheckResult::gated(
            "loss-identity",
            *z,
            3.0,
            "E[L] - L* - MSPE in standard errors".to_string(),
        )),
        None => checks.push(CheckResult::skipped(
            "loss-identity",
            3.0,
            loss_detail.clone().unwrap_or_default(),
        )),
    }

    // Mean A-optimality trace of sampled supports.
    let aopt_runs = cfg.trials.min(200);
    let aopt = aopt_trace_mean(x, factor, &q, k, aopt_runs, cfg.master_seed)?;

    let noise = noise_second_moment(model, x, factor)?;
    let minimax_ratio = (noise > 0.0).then(|| mse.scaled(1.0 / noise));

    let all_passed = !checks.iter().any(|c| matches!(c.status, CheckStatus::Fail));

    Ok(EvalReport {
        config: ConfigEcho {
            n,
            d,
            k,
            alpha: cfg.alpha,
            trials: cfg.trials,
            master_seed: cfg.master_seed,
            model: model.kind_name().to_string(),
        },
        metrics: Metrics {
            phi: scores.phi(),
            noise_second_moment: noise,
            mse_excess: mse,
            mspe_excess: mspe.excess,
            whiten_crosscheck_max_rel: mspe.crosscheck_max_rel,
            expected_loss_ratio: loss_ratio,
            minimax_ratio,
            aopt_trace_mean: aopt,
        },
        checks,
        all_passed,
    })
}

/// Max entrywise z-score of `mean[(S X)^+ S] - X^+` over `cfg.trials` draws.
pub fn pseudo_inverse_unbiasedness_z(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    cfg: &McConfig,
) -> Result<f64> {
    let (n, d) = (x.n(), x.d());
    let target = factor.pseudo_inverse();
    let draws = run_trials(cfg.trials, |t| {
        let mut rng = RngStream::new(cfg.master_seed, STREAM_PINV + t).rng();
        let (seq, _) = sample_vs_k(x, factor, q, cfg.k, &mut rng)?;
        Ok(sketched_pseudo_inverse(x, &seq)?.as_slice().to_vec())
    })?;
    let mut max_z = 0.0_f64;
    for idx in 0..d * n {
        let samples: Vec<f64> = draws.iter().map(|m| m[idx]).collect();
        let est = MetricEstimate::from_samples(&samples);
        let diff = (est.value - target.as_slice()[idx]).abs();
        let z = if est.std_error > 0.0 {
            diff / est.std_error
        } else if diff < 1e-12 {
            0.0
        } else {
            f64::MAX
        };
        max_z = max_z.max(z);
    }
    Ok(max_z)
}

/// `(S_pi X)^+ S_pi` as an explicit d x n matrix.
pub fn sketched_pseudo_inverse(
    x: &DesignMatrix,
    seq: &crate::sampler::DesignSequence,
) -> Result<DMatrix<f64>> {
    let sx = crate::estimator::apply_sketch(seq, x.entries())?;
    let d = x.d();
    let qr = sx.qr();
    let r_inv = qr
        .r()
        .solve_upper_triangular(&DMatrix::identity(d, d))
        .ok_or(Error::SketchRankDeficient { sigma_min: 0.0 })?;
    let pinv_sketch = r_inv * qr.q().transpose(); // d x k
    let mut out = DMatrix::zeros(d, x.n());
    for (t, &i) in seq.indices().iter().enumerate() {
        let w = seq.rescale()[t];
        for r in 0..d {
            out[(r, i)] += pinv_sketch[(r, t)] * w;
        }
    }
    Ok(out)
}

/// Smallest eigenvalue of `(k/(k-d+1)) (X^T X)^{-1} + 3 SE I - mean[(X^T S^T S X)^{-1}]`.
pub fn inverse_moment_margin(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    cfg: &McConfig,
) -> Result<f64> {
    let d = x.d();
    let k = cfg.k;
    let draws = run_trials(cfg.trials, |t| {
        let mut rng = RngStream::new(cfg.master_seed, STREAM_INV_MOMENT + t).rng();
        let (seq, _) = sample_vs_k(x, factor, q, k, &mut rng)?;
        let sx = crate::estimator::apply_sketch(&seq, x.entries())?;
        let mut gram = sx.transpose() * sx;
        let gt = gram.transpose();
        gram += gt;
        gram *= 0.5;
        let inv = gram
            .cholesky()
            .ok_or(Error::SketchRankDeficient { sigma_min: 0.0 })?
            .inverse();
        Ok(inv.as_slice().to_vec())
    })?;

    let mut mean = DMatrix::zeros(d, d);
    let mut max_se = 0.0_f64;
    for idx in 0..d * d {
        let samples: Vec<f64> = draws.iter().map(|m| m[idx]).collect();
        let est = MetricEstimate::from_samples(&samples);
        mean.as_mut_slice()[idx] = est.value;
        max_se = max_se.max(est.std_error);
    }
    let bound = factor.gram_inverse() * (k as f64 / (k - d + 1) as f64);
    let slack = DMatrix::identity(d, d) * (3.0 * max_se);
    let diff = bound + slack - mean;
    let eigen = SymmetricEigen::new((diff.clone() + diff.transpose()) * 0.5);
    Ok(eigen
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &l| a.min(l)))
}

/// Max stagewise trace residual over repeated volume-sampling runs.
pub fn trace_identity_max_residual(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    runs: u64,
    master_seed: u64,
) -> Result<f64> {
    let residuals = run_trials(runs, |t| {
        let mut rng = RngStream::new(master_seed, STREAM_TRACE + t).rng();
        let (_, stats) = sample_vs_d_checked(x, factor, q, &mut rng, default_max_trials(x.d()))?;
        Ok(stats
            .stage_trace_residuals
            .iter()
            .fold(0.0_f64, |a, &r| a.max(r)))
    })?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

/// Mean rejection-trial count of the volume sampler.
pub fn mean_bernoulli_trials(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    runs: u64,
    master_seed: u64,
) -> Result<f64> {
    let trials = run_trials(runs, |t| {
        let mut rng = RngStream::new(master_seed, STREAM_BUDGET + t).rng();
        let (_, stats) = sample_vs_d(x, factor, q, &mut rng, default_max_trials(x.d()))?;
        Ok(stats.bernoulli_trials as f64)
    })?;
    Ok(MetricEstimate::from_samples(&trials).value)
}

fn sketch_diag_max(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    k: usize,
    runs: u64,
    master_seed: u64,
) -> Result<f64> {
    let maxes = run_trials(runs, |t| {
        let mut rng = RngStream::new(master_seed, STREAM_PSD + t).rng();
        let (seq, _) = sample_vs_k(x, factor, q, k, &mut rng)?;
        let mults = seq.multiplicities();
        Ok((0..x.n())
            .map(|i| mults[i] as f64 / (k as f64 * q.probs()[i]))
            .fold(0.0_f64, f64::max))
    })?;
    Ok(maxes.into_iter().fold(0.0, f64::max))
}

/// Max coordinatewise z-score between the design-averaged estimator mean
/// and the full least-squares mean under the configured model.
pub fn estimator_unbiasedness_z(
    x: &DesignMatrix,
    factor: &GramFactor,
    model: &ResponseModel,
    q: &SamplingDistribution,
    cfg: &McConfig,
) -> Result<f64> {
    let d = x.d();
    let draws = run_trials(cfg.trials, |t| {
        let mut rng = RngStream::new(cfg.master_seed, STREAM_UNBIASED + t).rng();
        let (y, _) = generate_response(model, x, factor, &mut rng)?;
        let w_ls = least_squares(factor, x, &y)?;
        let (seq, _) = sample_vs_k(x, factor, q, cfg.k, &mut rng)?;
        let responses = SelectedResponses::from_design(&seq, &y)?;
        let est = subsampled_ls(x, &seq, &responses)?;
        Ok((0..d)
            .map(|i| est.w_hat.vector()[i] - w_ls.vector()[i])
            .collect::<Vec<f64>>())
    })?;
    let mut max_z = 0.0_f64;
    for i in 0..d {
        let samples: Vec<f64> = draws.iter().map(|v| v[i]).collect();
        let est = MetricEstimate::from_samples(&samples);
        let z = if est.std_error > 0.0 {
            est.value.abs() / est.std_error
        } else {
            0.0
        };
        max_z = max_z.max(z);
    }
    Ok(max_z)
}

fn aopt_trace_mean(
    x: &DesignMatrix,
    factor: &GramFactor,
    q: &SamplingDistribution,
    k: usize,
    runs: u64,
    master_seed: u64,
) -> Result<MetricEstimate> {
    let traces = run_trials(runs, |t| {
        let mut rng = RngStream::new(master_seed, STREAM_AOPT + t).rng();
        let (seq, _) = sample_vs_k(x, factor, q, k, &mut rng)?;
        aopt_trace(x, &seq.support())
    })?;
    Ok(MetricEstimate::from_samples(&traces))
}
