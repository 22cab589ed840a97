//! Acceptance suite: one test per verification criterion, each printing a
//! pass/fail line with the measured quantity and its pinned threshold.
//!
//! Every test is deterministic: matrices, responses, and draws all come
//! from fixed seeds, so a pass here is reproducible bit for bit.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use voldesign::nalgebra::{DMatrix, DVector};
use voldesign::*;

// Pinned instances. The 5x2 and 30x3 matrices are Gaussian draws from the
// named streams; the 5x2 seed was chosen so that every row keeps
// `q_i >= 0.5 l_i / d` under uniform sampling (max leverage 0.731 < 0.8).
const FIVE_BY_TWO_SEED: u64 = 1011;
const THIRTY_BY_THREE_SEED: u64 = 2000;

fn three_by_two() -> DesignMatrix {
    DesignMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap()
}

fn gaussian_matrix(n: usize, d: usize, seed: u64) -> DesignMatrix {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = RngStream::new(seed, 0).rng();
    DesignMatrix::new(DMatrix::from_fn(n, d, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    }))
    .unwrap()
}

/// `y = X w0 + e` with Gaussian `w0` and `e`; the noise keeps `y` out of
/// the column span with probability one.
fn fixed_response(x: &DesignMatrix, seed: u64) -> DVector<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = RngStream::new(seed, 1).rng();
    let w0 = DVector::from_fn(x.d(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = DVector::from_fn(x.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
    x.entries() * w0 + noise
}

fn named_distribution(
    scores: &ScoreProfile,
    n: usize,
    d: usize,
    kind: &str,
) -> SamplingDistribution {
    match kind {
        "uniform" => pure_distribution(scores, n, d, ScoreKind::Uniform).unwrap(),
        "leverage" => pure_distribution(scores, n, d, ScoreKind::Leverage).unwrap(),
        "mixture" => mixture_distribution(scores, n, d, 0.5).unwrap(),
        other => panic!("unknown distribution kind {other}"),
    }
}

#[test]
fn c01_score_identities() {
    use rand::Rng;
    let start = Instant::now();
    let mut rng = RngStream::new(101, 0).rng();
    let mut worst = 0.0_f64;
    let mut checked = 0;
    while checked < 100 {
        let n = rng.random_range(3..=100);
        let d = rng.random_range(1..=10.min(n));
        let m = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let x = DesignMatrix::new(m).unwrap();
        let f = match factorize(&x, DEFAULT_RANK_TOL) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let s = compute_scores(&x, &f).unwrap();
        let sum_l: f64 = s.leverage().iter().sum();
        let sum_v: f64 = s.inverse().iter().sum();
        worst = worst.max((sum_l - d as f64).abs() / d as f64);
        worst = worst.max((sum_v - s.phi()).abs() / s.phi());
        checked += 1;
    }
    let elapsed = start.elapsed();
    println!(
        "criterion 01 score-identities: max relative deviation {worst:.3e} (threshold 1e-8), \
         100 matrices in {elapsed:.2?}"
    );
    assert!(worst <= 1e-8);
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:.2?}");
}

/// Empirical sequence law versus the enumerated law: returns the total
/// variation distance, the statistical noise floor `E[TV]` implied by the
/// draw budget, and the TV after collapsing orderings (diagnostic).
fn tv_cell(
    x: &DesignMatrix,
    q: &SamplingDistribution,
    k: usize,
    draws: u64,
    seed: u64,
) -> (f64, f64, f64) {
    let f = factorize(x, DEFAULT_RANK_TOL).unwrap();
    let oracle = brute_force_vs_probs(x, q, k).unwrap();
    let floor: f64 = oracle
        .values()
        .map(|&p| 0.5 * (2.0 * p * (1.0 - p) / (std::f64::consts::PI * draws as f64)).sqrt())
        .sum();
    let seqs: Vec<Vec<usize>> = (0..draws)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed, t).rng();
            let (s, _) = sample_vs_k(x, &f, q, k, &mut rng).unwrap();
            s.indices().to_vec()
        })
        .collect();
    let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
    for s in &seqs {
        *counts.entry(s.clone()).or_default() += 1;
    }
    let mut tv = 0.0;
    for (seq, &p) in &oracle {
        let emp = counts.get(seq).copied().unwrap_or(0) as f64 / draws as f64;
        tv += (emp - p).abs();
    }
    for (seq, &c) in &counts {
        if !oracle.contains_key(seq) {
            tv += c as f64 / draws as f64;
        }
    }

    // Diagnostic: the same comparison with orderings collapsed.
    let sort_key = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let mut oracle_sets: HashMap<Vec<usize>, f64> = HashMap::new();
    for (seq, &p) in &oracle {
        *oracle_sets.entry(sort_key(seq)).or_default() += p;
    }
    let mut count_sets: HashMap<Vec<usize>, u64> = HashMap::new();
    for s in &seqs {
        *count_sets.entry(sort_key(s)).or_default() += 1;
    }
    let mut tv_sets = 0.0;
    for (set, &p) in &oracle_sets {
        let emp = count_sets.get(set).copied().unwrap_or(0) as f64 / draws as f64;
        tv_sets += (emp - p).abs();
    }
    for (set, &c) in &count_sets {
        if !oracle_sets.contains_key(set) {
            tv_sets += c as f64 / draws as f64;
        }
    }
    (0.5 * tv, floor, 0.5 * tv_sets)
}

#[test]
fn c02_sampler_oracle_equivalence() {
    let draws = 200_000u64;
    let matrices = [
        ("3x2", three_by_two()),
        ("5x2", gaussian_matrix(5, 2, FIVE_BY_TWO_SEED)),
    ];
    let mut failures = Vec::new();
    for (label, x) in &matrices {
        let f = factorize(x, DEFAULT_RANK_TOL).unwrap();
        let scores = compute_scores(x, &f).unwrap();
        for k in [2usize, 3, 4] {
            for kind in ["uniform", "leverage", "mixture"] {
                let q = named_distribution(&scores, x.n(), x.d(), kind);
                let start = Instant::now();
                let (tv, floor, tv_sets) = tv_cell(x, &q, k, draws, 555 + k as u64 * 31);
                let elapsed = start.elapsed();
                let ok = tv <= 0.01;
                println!(
                    "criterion 02 sampler-oracle [{label} k={k} q={kind}]: TV {tv:.4} \
                     (threshold 0.01, noise floor {floor:.4}, multiset TV {tv_sets:.4}) \
                     in {elapsed:.2?} -> {}",
                    if ok { "PASS" } else { "FAIL" }
                );
                assert!(elapsed.as_secs_f64() < 60.0, "cell exceeded 60 s");
                if !ok {
                    failures.push(format!(
                        "[{label} k={k} q={kind}] TV {tv:.4} vs floor {floor:.4}"
                    ));
                }
            }
        }
    }
    assert!(
        failures.is_empty(),
        "cells above the 0.01 TV budget (floor = unavoidable expected TV of a \
         correct sampler at 2e5 draws): {failures:?}"
    );
}

#[test]
fn c03_volume_sample_base_case() {
    let x = three_by_two();
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let scores = compute_scores(&x, &f).unwrap();
    let q = pure_distribution(&scores, 3, 2, ScoreKind::Leverage).unwrap();
    let draws = 100_000u64;
    let supports: Vec<Vec<usize>> = (0..draws)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(303, t).rng();
            let (seq, _) = sample_vs_d(&x, &f, &q, &mut rng, default_max_trials(2)).unwrap();
            seq.support()
        })
        .collect();
    let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
    for s in supports {
        *counts.entry(s).or_default() += 1;
    }
    let mut worst = 0.0_f64;
    for pair in [vec![0, 1], vec![0, 2], vec![1, 2]] {
        let freq = counts.get(&pair).copied().unwrap_or(0) as f64 / draws as f64;
        worst = worst.max((freq - 1.0 / 3.0).abs());
    }
    println!(
        "criterion 03 volume-sample-base-case: max |freq - 1/3| = {worst:.4} (threshold 0.01)"
    );
    assert!(worst <= 0.01);
}

#[test]
fn c04_rejection_trial_count() {
    for d in [2usize, 4, 8, 16] {
        let n = 4 * d;
        let x = gaussian_matrix(n, d, 400 + d as u64);
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let scores = compute_scores(&x, &f).unwrap();
        let q = pure_distribution(&scores, n, d, ScoreKind::Leverage).unwrap();
        let runs = 10_000u64;
        let totals: Vec<f64> = (0..runs)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::new(404, t).rng();
                let (_, stats) = sample_vs_d(&x, &f, &q, &mut rng, default_max_trials(d)).unwrap();
                stats.bernoulli_trials as f64
            })
            .collect();
        let mean = totals.iter().sum::<f64>() / runs as f64;
        let bound = 1.2 * 2.0 * d as f64 * ((d as f64).ln() + 1.0);
        println!(
            "criterion 04 trial-count [d={d}]: mean {mean:.2} (threshold {bound:.2}) over {runs} runs"
        );
        assert!(mean <= bound, "d = {d}: mean {mean} > bound {bound}");
    }
}

#[test]
fn c05_stagewise_trace_identity() {
    let mut worst = 0.0_f64;
    for (x, seed) in [
        (three_by_two(), 505u64),
        (gaussian_matrix(20, 5, 506), 507u64),
    ] {
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let scores = compute_scores(&x, &f).unwrap();
        let q = mixture_distribution(&scores, x.n(), x.d(), 0.5).unwrap();
        let residuals: Vec<f64> = (0..1000u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::new(seed, t).rng();
                let (_, stats) =
                    sample_vs_d_checked(&x, &f, &q, &mut rng, default_max_trials(x.d())).unwrap();
                stats
                    .stage_trace_residuals
                    .iter()
                    .fold(0.0_f64, |a, &r| a.max(r))
            })
            .collect();
        worst = worst.max(residuals.into_iter().fold(0.0, f64::max));
    }
    println!(
        "criterion 05 trace-identity: max relative residual {worst:.3e} (threshold 1e-6) \
         over 1000 runs per instance"
    );
    assert!(worst <= 1e-6);
}

#[test]
fn c06_unbiasedness_of_sketched_pseudoinverse() {
    let x = three_by_two();
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let scores = compute_scores(&x, &f).unwrap();
    let q = mixture_distribution(&scores, 3, 2, 0.5).unwrap();
    let k = 4;
    let draws = 100_000u64;

    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..draws)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(606, t).rng();
            let (seq, _) = sample_vs_k(&x, &f, &q, k, &mut rng).unwrap();
            let p = harness::sketched_pseudo_inverse(&x, &seq)
                .unwrap()
                .as_slice()
                .to_vec();
            let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
            let responses = SelectedResponses::from_design(&seq, &y).unwrap();
            let w = subsampled_ls(&x, &seq, &responses).unwrap();
            (p, w.w_hat.vector().as_slice().to_vec())
        })
        .collect();

    let target = f.pseudo_inverse();
    let mut max_z = 0.0_f64;
    let mut frobenius_sq = 0.0_f64;
    for idx in 0..6 {
        let vals: Vec<f64> = samples.iter().map(|s| s.0[idx]).collect();
        let est = MetricEstimate::from_samples(&vals);
        max_z = max_z.max((est.value - target.as_slice()[idx]).abs() / est.std_error);
        frobenius_sq += (est.value - target.as_slice()[idx]).powi(2);
    }
    let frobenius = frobenius_sq.sqrt();
    let frobenius_budget = 5.0 / (draws as f64).sqrt();
    let expected_w = [4.0 / 3.0, 7.0 / 3.0];
    let mut max_zw = 0.0_f64;
    for (i, want) in expected_w.iter().enumerate() {
        let vals: Vec<f64> = samples.iter().map(|s| s.1[i]).collect();
        let est = MetricEstimate::from_samples(&vals);
        max_zw = max_zw.max((est.value - want).abs() / est.std_error);
    }
    println!(
        "criterion 06 unbiasedness: pseudo-inverse max z {max_z:.2}, estimator-mean max z \
         {max_zw:.2} (threshold 3), Frobenius gap {frobenius:.5} (budget {frobenius_budget:.5}) \
         over {draws} draws"
    );
    assert!(max_z <= 3.0);
    assert!(max_zw <= 3.0);
    assert!(frobenius <= frobenius_budget);
}

#[test]
fn c07_inverse_moment_bound() {
    let x = three_by_two();
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let scores = compute_scores(&x, &f).unwrap();
    let q = mixture_distribution(&scores, 3, 2, 0.5).unwrap();
    for k in [3usize, 4, 6] {
        let cfg = McConfig {
            k,
            alpha: 0.5,
            trials: 100_000,
            master_seed: 707,
        };
        let margin = harness::inverse_moment_margin(&x, &f, &q, &cfg).unwrap();
        println!(
            "criterion 07 inverse-moment [k={k}]: smallest eigenvalue of bound + slack - mean \
             = {margin:.3e} (must be >= 0)"
        );
        assert!(margin >= -1e-12, "k = {k}: margin {margin}");
    }
}

#[test]
fn c08_marginal_formula() {
    let x = three_by_two();
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let scores = compute_scores(&x, &f).unwrap();
    let q = mixture_distribution(&scores, 3, 2, 0.5).unwrap();
    let report = check_marginals(&x, &f, &q, 4, 200_000, 808).unwrap();
    println!(
        "criterion 08 marginal-formula: max z {:.2} (threshold 3), flagged {:?}, \
         covariance max z {:.2}",
        report.max_z, report.flagged, report.cov_max_z
    );
    assert!(report.max_z <= 3.0);
    assert!(report.flagged.is_empty());
}

#[test]
fn c09_mse_excess_trend() {
    let start = Instant::now();
    let x = gaussian_matrix(30, 3, THIRTY_BY_THREE_SEED);
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let y = fixed_response(&x, THIRTY_BY_THREE_SEED);
    let model = ResponseModel::Fixed {
        y: y.iter().copied().collect(),
    };
    let mut prev: Option<(f64, f64)> = None;
    let mut excesses = Vec::new();
    for k in [5usize, 10, 20, 40] {
        let cfg = McConfig {
            k,
            alpha: 0.5,
            trials: 10_000,
            master_seed: THIRTY_BY_THREE_SEED * 7 + k as u64,
        };
        let e = estimate_mse_excess(&x, &f, &model, &cfg).unwrap();
        let scaled = e.value * k as f64;
        let se = e.std_error * k as f64;
        println!("criterion 09 mse-trend [k={k}]: excess*k = {scaled:.4} +- {se:.4}");
        if let Some((pv, pse)) = prev {
            let slack = 3.0 * (se * se + pse * pse).sqrt();
            assert!(
                scaled <= pv + slack,
                "excess*k increased from {pv} to {scaled} beyond 3 SE"
            );
        }
        prev = Some((scaled, se));
        excesses.push(e.value);
    }
    assert!(
        excesses[3] < excesses[0],
        "excess at k=40 ({}) not strictly below excess at k=5 ({})",
        excesses[3],
        excesses[0]
    );
    let elapsed = start.elapsed();
    println!("criterion 09 mse-trend: non-increasing and strictly decreasing, {elapsed:.2?}");
    assert!(elapsed.as_secs_f64() < 300.0);
}

#[test]
fn c10_expected_loss_identity() {
    let x = gaussian_matrix(30, 3, THIRTY_BY_THREE_SEED);
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let y = fixed_response(&x, THIRTY_BY_THREE_SEED);
    let cfg = McConfig {
        k: 20,
        alpha: 0.5,
        trials: 10_000,
        master_seed: 1010,
    };
    let report = estimate_loss_ratio(&x, &f, &y, &cfg).unwrap();
    let z = report.identity_residual.value.abs() / report.identity_residual.std_error;
    println!(
        "criterion 10 loss-identity: |E[L] - L* - MSPE| = {:.4e} ({z:.2} SE, threshold 3), \
         ratio {:.4}, per-draw decomposition max rel {:.2e}",
        report.identity_residual.value.abs(),
        report.ratio.value,
        report.pythagoras_max_rel
    );
    assert!(z <= 3.0);
    assert!(report.ratio.value >= 1.0 - 3.0 * report.ratio.std_error);

    // The normalized excess ratio - 1 shrinks as the design grows.
    let d = x.d();
    let mut prev: Option<(f64, f64)> = None;
    for k in [d + 2, 2 * d, 4 * d, 8 * d] {
        let cfg = McConfig {
            k,
            alpha: 0.5,
            trials: 10_000,
            master_seed: 1012 + k as u64,
        };
        let r = estimate_loss_ratio(&x, &f, &y, &cfg).unwrap();
        let excess = r.ratio.value - 1.0;
        println!(
            "criterion 10 loss-ratio-trend [k={k}]: ratio - 1 = {excess:.5} +- {:.5}",
            r.ratio.std_error
        );
        if let Some((pv, pse)) = prev {
            let slack = 3.0 * (r.ratio.std_error * r.ratio.std_error + pse * pse).sqrt();
            assert!(
                excess <= pv + slack,
                "ratio - 1 increased from {pv} to {excess} beyond 3 SE"
            );
        }
        prev = Some((excess, r.ratio.std_error));
    }
}

#[test]
fn c11_whitening_reduction() {
    let x = gaussian_matrix(30, 3, THIRTY_BY_THREE_SEED);
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let y = fixed_response(&x, THIRTY_BY_THREE_SEED);
    let model = ResponseModel::Fixed {
        y: y.iter().copied().collect(),
    };
    let cfg = McConfig {
        k: 10,
        alpha: 0.5,
        trials: 100,
        master_seed: 1111,
    };
    let report = estimate_mspe_excess(&x, &f, &model, &cfg).unwrap();
    println!(
        "criterion 11 whitening-reduction: max relative gap {:.3e} (threshold 1e-8) over {} \
         paired draws",
        report.crosscheck_max_rel, report.crosscheck_draws
    );
    assert_eq!(report.crosscheck_draws, 100);
    assert!(report.crosscheck_max_rel <= 1e-8);
}

#[test]
fn c12_averaging_identity() {
    let x = three_by_two();
    let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
    let scores = compute_scores(&x, &f).unwrap();
    let q = mixture_distribution(&scores, 3, 2, 0.5).unwrap();
    let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
    let w_star = least_squares(&f, &x, &y).unwrap();
    let k = 4;

    let excess_for = |m: usize, trials: u64, block: u64| -> f64 {
        let vals: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::new(3000 + block, t).rng();
                let mut ests = Vec::with_capacity(m);
                for _ in 0..m {
                    let (seq, _) = sample_vs_k(&x, &f, &q, k, &mut rng).unwrap();
                    let responses = SelectedResponses::from_design(&seq, &y).unwrap();
                    ests.push(subsampled_ls(&x, &seq, &responses).unwrap());
                }
                let mean = averaged_estimate(&ests).unwrap();
                (mean.vector() - w_star.vector()).norm_squared()
            })
            .collect();
        MetricEstimate::from_samples(&vals).value
    };

    // 50k single designs + 3125 x 16 averaged designs = 1e5 designs total.
    let e1 = excess_for(1, 50_000, 0);
    let e16 = excess_for(16, 3_125, 1);
    let ratio = e16 * 16.0 / e1;
    println!(
        "criterion 12 averaging-identity: excess(m=1) {e1:.5}, excess(m=16) {e16:.6}, \
         16*excess(16)/excess(1) = {ratio:.4} (threshold |ratio - 1| <= 0.15)"
    );
    assert!((ratio - 1.0).abs() <= 0.15);
}
