//! Report documents: a human-readable table on standard output plus the
//! same content as JSON at `--out`. Every schema keeps all of its keys in
//! every run; entries that cannot be computed carry an error string
//! instead of disappearing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use voldesign::{CheckStatus, EvalReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommonEcho {
    pub input: String,
    pub n: usize,
    pub d: usize,
    pub k: Option<usize>,
    pub dist: String,
    pub alpha: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistEntry {
    pub probs: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoresReport {
    pub config: CommonEcho,
    pub phi: f64,
    pub leverage: Vec<f64>,
    pub inverse: Vec<f64>,
    pub uniform: DistEntry,
    pub leverage_dist: DistEntry,
    pub inverse_dist: DistEntry,
    pub mixture: DistEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignRecord {
    pub stream_id: u64,
    pub indices: Vec<usize>,
    pub multiplicities: Vec<u64>,
    pub rescale: Vec<f64>,
    pub bernoulli_trials: u64,
    pub iid_draws_consumed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleReport {
    pub config: CommonEcho,
    pub q: Vec<f64>,
    pub designs: Vec<DesignRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRecord {
    pub stream_id: u64,
    pub indices: Vec<usize>,
    pub w_hat: Vec<f64>,
    pub condition_report: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub config: CommonEcho,
    pub consistent_system: bool,
    pub w_ls: Vec<f64>,
    pub estimates: Vec<EstimateRecord>,
    pub average: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleEntry {
    pub sequence: Vec<usize>,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub config: CommonEcho,
    pub entries: Vec<OracleEntry>,
    pub total_probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyDocument {
    pub input: String,
    pub report: EvalReport,
}

pub fn write_json<T: Serialize>(doc: &T, out: Option<&Path>) -> anyhow::Result<()> {
    if let Some(path) = out {
        let mut body = serde_json::to_string_pretty(doc)?;
        body.push('\n');
        std::fs::write(path, body)?;
    }
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn print_scores(r: &ScoresReport) {
    println!(
        "design: n = {}, d = {} ({})",
        r.config.n, r.config.d, r.config.input
    );
    println!("phi = {:.12}", r.phi);
    println!("row  leverage    inverse");
    for i in 0..r.leverage.len() {
        println!("{i:>3}  {:<10.6}  {:<10.6}", r.leverage[i], r.inverse[i]);
    }
    for (name, entry) in [
        ("uniform", &r.uniform),
        ("leverage", &r.leverage_dist),
        ("inverse", &r.inverse_dist),
        (&format!("mixture(alpha={})", r.config.alpha), &r.mixture),
    ] {
        match (&entry.probs, &entry.error) {
            (Some(p), _) => println!("p^{name} = [{}]", fmt_vec(p)),
            (None, Some(e)) => println!("p^{name} unavailable: {e}"),
            _ => {}
        }
    }
}

pub fn print_sample(r: &SampleReport) {
    println!(
        "sampled {} design(s): n = {}, k = {}, dist = {}, seed = {}",
        r.designs.len(),
        r.config.n,
        r.config.k.unwrap_or(0),
        r.config.dist,
        r.config.master_seed
    );
    for rec in &r.designs {
        println!(
            "  stream {}: pi = {:?}, multiplicities = {:?}, trials = {}",
            rec.stream_id, rec.indices, rec.multiplicities, rec.bernoulli_trials
        );
    }
}

pub fn print_estimate(r: &EstimateReport) {
    println!(
        "estimate: n = {}, d = {}, k = {}, dist = {}, seed = {}",
        r.config.n,
        r.config.d,
        r.config.k.unwrap_or(0),
        r.config.dist,
        r.config.master_seed
    );
    if r.consistent_system {
        println!("consistent-system: response lies in the column span; estimates are exact");
    }
    println!("w_ls  = [{}]", fmt_vec(&r.w_ls));
    for e in &r.estimates {
        println!(
            "  stream {}: w_hat = [{}]  (sigma_min = {:.3e})",
            e.stream_id,
            fmt_vec(&e.w_hat),
            e.condition_report
        );
    }
    if let Some(avg) = &r.average {
        println!("average = [{}]", fmt_vec(avg));
    }
}

pub fn print_oracle(r: &OracleReport) {
    println!(
        "exact law over sequences: n = {}, k = {}, dist = {} ({} sequences, total {:.12})",
        r.config.n,
        r.config.k.unwrap_or(0),
        r.config.dist,
        r.entries.len(),
        r.total_probability
    );
    for e in &r.entries {
        println!("  {:?}  {:.10}", e.sequence, e.probability);
    }
}

pub fn print_verify(doc: &VerifyDocument) {
    let r = &doc.report;
    println!(
        "verify: n = {}, d = {}, k = {}, alpha = {}, trials = {}, seed = {}, model = {}",
        r.config.n,
        r.config.d,
        r.config.k,
        r.config.alpha,
        r.config.trials,
        r.config.master_seed,
        r.config.model
    );
    println!(
        "phi = {:.10}, E||xi||^2 = {:.10}",
        r.metrics.phi, r.metrics.noise_second_moment
    );
    println!(
        "mse_excess = {:.6e} +- {:.2e}   mspe_excess = {:.6e} +- {:.2e}",
        r.metrics.mse_excess.value,
        r.metrics.mse_excess.std_error,
        r.metrics.mspe_excess.value,
        r.metrics.mspe_excess.std_error
    );
    match &r.metrics.expected_loss_ratio {
        Some(m) => println!(
            "expected_loss_ratio = {:.6} +- {:.2e}",
            m.value, m.std_error
        ),
        None => {
            println!("expected_loss_ratio = (skipped: needs a fixed response outside the span)")
        }
    }
    match &r.metrics.minimax_ratio {
        Some(m) => println!("minimax_ratio = {:.6e} +- {:.2e}", m.value, m.std_error),
        None => println!("minimax_ratio = (skipped: zero noise)"),
    }
    println!(
        "aopt_trace_mean = {:.6} +- {:.2e}",
        r.metrics.aopt_trace_mean.value, r.metrics.aopt_trace_mean.std_error
    );
    println!("checks:");
    for c in &r.checks {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        match c.observed {
            Some(obs) => println!(
                "  [{status}] {:<28} observed {obs:.6e}  threshold {:.3e}  ({})",
                c.name, c.threshold, c.detail
            ),
            None => println!("  [{status}] {:<28} {}", c.name, c.detail),
        }
    }
    println!(
        "overall: {}",
        if r.all_passed {
            "all checks passed"
        } else {
            "SOME CHECKS FAILED"
        }
    );
}
