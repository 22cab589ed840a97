//! Command-line front end: data ingestion, configuration, subcommands,
//! machine-readable reports.
//!
//! Exit codes: 0 success, 1 usage or parse failure, 2 numerical
//! precondition failure (rank, alpha, k), 3 verification failure.

mod io;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use voldesign::*;

use crate::io::{load_matrix, LoadedMatrix};
use crate::report::*;

#[derive(Parser)]
#[command(
    name = "voldesign",
    version,
    about = "Randomized experimental design for linear regression via rescaled volume sampling"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// CSV input: one experiment row per line, optional header, optional
    /// final response column named `y`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Design size (number of sampled rows, k >= d).
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Mixture parameter in [0.5, 0.75].
    #[arg(long, global = true, default_value_t = 0.5)]
    alpha: f64,

    /// Sampling distribution for the i.i.d. part.
    #[arg(long, global = true, value_enum, default_value_t = DistArg::Mixture)]
    dist: DistArg,

    /// Master seed; all randomness derives from (seed, stream) pairs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Monte Carlo trials for `verify`.
    #[arg(long, global = true, default_value_t = 2000)]
    trials: u64,

    /// Response model for `verify` (defaults to `fixed` when the input has
    /// a response column, else `homo`).
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,

    /// Noise scale for `homo` and `bayes` models.
    #[arg(long, global = true)]
    sigma: Option<f64>,

    /// Comma-separated per-row noise scales for the `hetero` model.
    #[arg(long, global = true)]
    sigma_list: Option<String>,

    /// Prior scale for the `bayes` model.
    #[arg(long, global = true)]
    prior_scale: Option<f64>,

    /// Write the machine-readable JSON report here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of independent designs to draw (`sample`, `estimate`).
    #[arg(long, global = true, default_value_t = 1)]
    designs: usize,

    /// Reuse the designs from a `sample` report instead of drawing fresh
    /// ones (`estimate`).
    #[arg(long, global = true)]
    from_sample: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Leverage/inverse scores and the sampling distributions.
    Scores,
    /// Draw rescaled volume-sampled designs.
    Sample,
    /// Subsampled least-squares estimates (requires a response column).
    Estimate,
    /// Run the identity and bound verification battery.
    Verify,
    /// Enumerate the exact sampling law (tiny inputs only).
    Oracle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistArg {
    Uniform,
    Leverage,
    Inverse,
    Mixture,
}

impl DistArg {
    fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Leverage => "leverage",
            Self::Inverse => "inverse",
            Self::Mixture => "mixture",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Homo,
    Hetero,
    Bayes,
    Fixed,
}

type CliResult<T> = std::result::Result<T, Failure>;

enum Failure {
    /// Bad flags, unreadable or malformed input files.
    Usage(String),
    /// Numerical preconditions: rank, alpha range, k < d, enumeration size.
    Numerical(String),
}

impl From<voldesign::Error> for Failure {
    fn from(e: voldesign::Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<io::LoadError> for Failure {
    fn from(e: io::LoadError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> CliResult<u8> {
    let input = cli
        .input
        .as_ref()
        .ok_or_else(|| Failure::Usage("--input is required".to_string()))?;
    let loaded = load_matrix(input)?;
    if !(0.5..=0.75).contains(&cli.alpha) {
        return Err(voldesign::Error::AlphaOutOfRange { alpha: cli.alpha }.into());
    }
    if cli.designs < 1 {
        return Err(Failure::Usage("--designs must be at least 1".to_string()));
    }
    if cli.trials < 1 {
        return Err(Failure::Usage("--trials must be at least 1".to_string()));
    }

    match cli.cmd {
        Cmd::Scores => cmd_scores(cli, &loaded),
        Cmd::Sample => cmd_sample(cli, &loaded),
        Cmd::Estimate => cmd_estimate(cli, &loaded),
        Cmd::Verify => cmd_verify(cli, &loaded),
        Cmd::Oracle => cmd_oracle(cli, &loaded),
    }
}

fn echo(cli: &Cli, loaded: &LoadedMatrix, k: Option<usize>) -> CommonEcho {
    CommonEcho {
        input: cli.input.as_ref().unwrap().display().to_string(),
        n: loaded.matrix.n(),
        d: loaded.matrix.d(),
        k,
        dist: cli.dist.name().to_string(),
        alpha: cli.alpha,
        master_seed: cli.seed,
    }
}

fn required_k(cli: &Cli, d: usize, n: usize) -> CliResult<usize> {
    let k = cli
        .k
        .ok_or_else(|| Failure::Usage("--k is required for this subcommand".to_string()))?;
    let _ = n;
    if k < d {
        return Err(voldesign::Error::KTooSmall { k, d }.into());
    }
    Ok(k)
}

fn build_distribution(
    cli: &Cli,
    x: &DesignMatrix,
    factor: &GramFactor,
) -> CliResult<SamplingDistribution> {
    let scores = compute_scores(x, factor)?;
    let (n, d) = (x.n(), x.d());
    let q = match cli.dist {
        DistArg::Uniform => pure_distribution(&scores, n, d, ScoreKind::Uniform)?,
        DistArg::Leverage => pure_distribution(&scores, n, d, ScoreKind::Leverage)?,
        DistArg::Inverse => pure_distribution(&scores, n, d, ScoreKind::Inverse)?,
        DistArg::Mixture => mixture_distribution(&scores, n, d, cli.alpha)?,
    };
    Ok(q)
}

fn cmd_scores(cli: &Cli, loaded: &LoadedMatrix) -> CliResult<u8> {
    let x = &loaded.matrix;
    let factor = factorize(x, DEFAULT_RANK_TOL)?;
    let scores = compute_scores(x, &factor)?;
    let (n, d) = (x.n(), x.d());

    let entry = |r: voldesign::Result<SamplingDistribution>| match r {
        Ok(q) => DistEntry {
            probs: Some(q.probs().iter().copied().collect()),
            error: None,
        },
        Err(e) => DistEntry {
            probs: None,
            error: Some(e.to_string()),
        },
    };

    let doc = ScoresReport {
        config: echo(cli, loaded, None),
        phi: scores.phi(),
        leverage: scores.leverage().iter().copied().collect(),
        inverse: scores.inverse().iter().copied().collect(),
        uniform: entry(pure_distribution(&scores, n, d, ScoreKind::Uniform)),
        leverage_dist: entry(pure_distribution(&scores, n, d, ScoreKind::Leverage)),
        inverse_dist: entry(pure_distribution(&scores, n, d, ScoreKind::Inverse)),
        mixture: entry(mixture_distribution(&scores, n, d, cli.alpha)),
    };
    print_scores(&doc);
    write_json(&doc, cli.out.as_deref())?;
    Ok(0)
}

fn cmd_sample(cli: &Cli, loaded: &LoadedMatrix) -> CliResult<u8> {
    let x = &loaded.matrix;
    let factor = factorize(x, DEFAULT_RANK_TOL)?;
    let k = required_k(cli, x.d(), x.n())?;
    let q = build_distribution(cli, x, &factor)?;

    let mut designs = Vec::with_capacity(cli.designs);
    for j in 0..cli.designs as u64 {
        let mut rng = RngStream::new(cli.seed, j).rng();
        let (seq, stats) = sample_vs_k(x, &factor, &q, k, &mut rng)?;
        designs.push(DesignRecord {
            stream_id: j,
            indices: seq.indices().to_vec(),
            multiplicities: seq.multiplicities(),
            rescale: seq.rescale().to_vec(),
            bernoulli_trials: stats.bernoulli_trials,
            iid_draws_consumed: stats.iid_draws_consumed,
        });
    }

    let doc = SampleReport {
        config: echo(cli, loaded, Some(k)),
        q: q.probs().iter().copied().collect(),
        designs,
    };
    print_sample(&doc);
    write_json(&doc, cli.out.as_deref())?;
    Ok(0)
}

fn cmd_estimate(cli: &Cli, loaded: &LoadedMatrix) -> CliResult<u8> {
    let x = &loaded.matrix;
    let y = loaded.response.as_ref().ok_or_else(|| {
        Failure::Usage("estimate requires a response: add a final CSV column named `y`".to_string())
    })?;
    let factor = factorize(x, DEFAULT_RANK_TOL)?;
    let w_ls = least_squares(&factor, x, y)?;
    let ls_residual = x.entries() * w_ls.vector() - y;
    let consistent = ls_residual.norm() <= 1e-10 * y.norm().max(f64::MIN_POSITIVE);

    // Designs come either from a prior `sample` report or from fresh draws
    // with the same (seed, stream) layout that `sample` uses.
    let sequences: Vec<(u64, DesignSequence)> = match &cli.from_sample {
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let prior: SampleReport = serde_json::from_str(&body)
                .map_err(|e| Failure::Usage(format!("malformed sample report: {e}")))?;
            if prior.config.n != x.n() {
                return Err(Failure::Usage(format!(
                    "sample report was built for n = {}, input has n = {}",
                    prior.config.n,
                    x.n()
                )));
            }
            let q = SamplingDistribution::from_probs(prior.q.clone())?;
            prior
                .designs
                .iter()
                .map(|rec| {
                    DesignSequence::from_indices(rec.indices.clone(), q.clone(), x.n())
                        .map(|seq| (rec.stream_id, seq))
                        .map_err(Failure::from)
                })
                .collect::<std::result::Result<_, _>>()?
        }
        None => {
            let k = required_k(cli, x.d(), x.n())?;
            let q = build_distribution(cli, x, &factor)?;
            let mut seqs = Vec::with_capacity(cli.designs);
            for j in 0..cli.designs as u64 {
                let mut rng = RngStream::new(cli.seed, j).rng();
                let (seq, _) = sample_vs_k(x, &factor, &q, k, &mut rng)?;
                seqs.push((j, seq));
            }
            seqs
        }
    };

    let mut estimates = Vec::with_capacity(sequences.len());
    let mut records = Vec::with_capacity(sequences.len());
    for (stream_id, seq) in &sequences {
        let responses = SelectedResponses::from_design(seq, y)?;
        let est = subsampled_ls(x, seq, &responses)?;
        records.push(EstimateRecord {
            stream_id: *stream_id,
            indices: seq.indices().to_vec(),
            w_hat: est.w_hat.vector().iter().copied().collect(),
            condition_report: est.condition_report,
        });
        estimates.push(est);
    }
    let average = if estimates.len() > 1 {
        Some(
            averaged_estimate(&estimates)?
                .vector()
                .iter()
                .copied()
                .collect(),
        )
    } else {
        None
    };

    let k_echo = sequences.first().map(|(_, s)| s.k());
    let doc = EstimateReport {
        config: echo(cli, loaded, k_echo),
        consistent_system: consistent,
        w_ls: w_ls.vector().iter().copied().collect(),
        estimates: records,
        average,
    };
    print_estimate(&doc);
    write_json(&doc, cli.out.as_deref())?;
    Ok(0)
}

fn build_model(cli: &Cli, loaded: &LoadedMatrix, factor: &GramFactor) -> CliResult<ResponseModel> {
    let x = &loaded.matrix;
    let w_star: Vec<f64> = match &loaded.response {
        Some(y) => least_squares(factor, x, y)?
            .vector()
            .iter()
            .copied()
            .collect(),
        None => vec![1.0; x.d()],
    };
    let kind = cli.model.unwrap_or(if loaded.response.is_some() {
        ModelArg::Fixed
    } else {
        ModelArg::Homo
    });
    let model = match kind {
        ModelArg::Fixed => {
            let y = loaded.response.as_ref().ok_or_else(|| {
                Failure::Usage("--model fixed requires a response column".to_string())
            })?;
            ResponseModel::Fixed {
                y: y.iter().copied().collect(),
            }
        }
        ModelArg::Homo => ResponseModel::Homoscedastic {
            w_star,
            sigma: cli.sigma.unwrap_or(1.0),
        },
        ModelArg::Hetero => {
            let list = cli.sigma_list.as_ref().ok_or_else(|| {
                Failure::Usage("--model hetero requires --sigma-list".to_string())
            })?;
            let sigmas: Vec<f64> = list
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Failure::Usage(format!("bad --sigma-list: {e}")))?;
            if sigmas.len() != x.n() {
                return Err(Failure::Usage(format!(
                    "--sigma-list has {} entries, input has {} rows",
                    sigmas.len(),
                    x.n()
                )));
            }
            ResponseModel::Heteroscedastic { w_star, sigmas }
        }
        ModelArg::Bayes => ResponseModel::Bayesian {
            prior_mean: w_star,
            prior_scale: cli.prior_scale.unwrap_or(1.0),
            sigma: cli.sigma.unwrap_or(1.0),
        },
    };
    model.validate(x)?;
    Ok(model)
}

fn cmd_verify(cli: &Cli, loaded: &LoadedMatrix) -> CliResult<u8> {
    let x = &loaded.matrix;
    let factor = factorize(x, DEFAULT_RANK_TOL)?;
    let (n, d) = (x.n(), x.d());
    let k = match cli.k {
        Some(k) if k < d => return Err(voldesign::Error::KTooSmall { k, d }.into()),
        Some(k) => k,
        None => (2 * d + 2).min(n),
    };
    let model = build_model(cli, loaded, &factor)?;
    let cfg = McConfig {
        k,
        alpha: cli.alpha,
        trials: cli.trials,
        master_seed: cli.seed,
    };
    let report = run_verification(x, &factor, &model, &cfg)?;
    let doc = VerifyDocument {
        input: cli.input.as_ref().unwrap().display().to_string(),
        report,
    };
    print_verify(&doc);
    write_json(&doc, cli.out.as_deref())?;
    Ok(if doc.report.all_passed { 0 } else { 3 })
}

fn cmd_oracle(cli: &Cli, loaded: &LoadedMatrix) -> CliResult<u8> {
    let x = &loaded.matrix;
    let factor = factorize(x, DEFAULT_RANK_TOL)?;
    let k = required_k(cli, x.d(), x.n())?;
    let q = build_distribution(cli, x, &factor)?;
    let law = brute_force_vs_probs(x, &q, k)?;
    let entries: Vec<OracleEntry> = law
        .iter()
        .map(|(seq, &p)| OracleEntry {
            sequence: seq.clone(),
            probability: p,
        })
        .collect();
    let total: f64 = entries.iter().map(|e| e.probability).sum();
    let doc = OracleReport {
        config: echo(cli, loaded, Some(k)),
        entries,
        total_probability: total,
    };
    print_oracle(&doc);
    write_json(&doc, cli.out.as_deref())?;
    Ok(0)
}
