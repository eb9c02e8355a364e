use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "treecert", version, about = "Certify decision trees and tree ensembles against evasion attacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Compute the attack set and certified region of a model.
    Analyze(AnalyzeArgs),
    /// Report accuracy, robustness and resilience on a test set.
    Verify(VerifyArgs),
    /// Measure robustness on randomly perturbed copies of a test set.
    Perturb(PerturbArgs),
    /// Generate a random forest (and optionally a labelled dataset).
    Gen(GenArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ThreatArgs {
    /// Perturbation radius applied to every feature, at cost 1 each.
    #[arg(long, requires = "budget", conflicts_with = "threat_json")]
    pub delta: Option<f64>,
    /// Attacker budget (with --delta).
    #[arg(long)]
    pub budget: Option<u32>,
    /// Full per-feature threat model as JSON.
    #[arg(long, value_name = "FILE")]
    pub threat_json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalysisArgs {
    /// Refinement iterations per worker, or `converge`.
    #[arg(long, default_value = "1000", value_parser = parse_iterations)]
    pub iterations: IterationLimit,
    /// Share of candidates split per iteration.
    #[arg(long, default_value_t = 0.05)]
    pub split_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub enum IterationLimit {
    Converge,
    Max(usize),
}

impl IterationLimit {
    pub fn get(self) -> Option<usize> {
        match self {
            IterationLimit::Converge => None,
            IterationLimit::Max(n) => Some(n),
        }
    }
}

fn parse_iterations(s: &str) -> Result<IterationLimit, String> {
    if s == "converge" {
        return Ok(IterationLimit::Converge);
    }
    s.parse()
        .map(IterationLimit::Max)
        .map_err(|_| format!("expected a number or `converge`, got `{s}`"))
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[command(flatten)]
    pub threat: ThreatArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Echoed in outputs; the analysis is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Test set in LIBSVM format.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Min-max scale the test set to [0,1] before use.
    #[arg(long)]
    pub normalize: bool,
    /// Region from a previous `analyze`; computed on the fly otherwise.
    #[arg(long, value_name = "FILE")]
    pub region: Option<PathBuf>,
    #[command(flatten)]
    pub threat: ThreatArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Neighbourhood radius; repeat for several values.
    #[arg(long = "epsilon", required = true, num_args = 1)]
    pub epsilons: Vec<f64>,
    /// Intersect neighbourhoods with `[LO,HI]` on every feature.
    #[arg(long, value_name = "LO,HI", value_parser = parse_domain)]
    pub clip_domain: Option<(f64, f64)>,
    /// Name used for the dataset column of the report.
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    if lo <= hi {
        Ok((lo, hi))
    } else {
        Err(format!("empty domain [{lo},{hi}]"))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Skip the exhaustive robustness computation.
    #[arg(long)]
    pub no_exact: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of synthetic test sets per radius.
    #[arg(long, default_value_t = 100)]
    pub sets: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1)]
    pub trees: usize,
    #[arg(long)]
    pub depth: usize,
    #[arg(long)]
    pub features: usize,
    #[arg(long, default_value_t = 0.0)]
    pub threshold_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub threshold_hi: f64,
    /// Round thresholds to multiples of this step.
    #[arg(long)]
    pub threshold_step: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [-1i64, 1], allow_negative_numbers = true)]
    pub labels: Vec<i64>,
    #[arg(long)]
    pub seed: u64,
    /// Where to write the model.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also sample this many instances labelled by the model.
    #[arg(long, requires = "data_out")]
    pub instances: Option<usize>,
    /// Probability of replacing a sampled label with a random one.
    #[arg(long, default_value_t = 0.1)]
    pub label_noise: f64,
    #[arg(long, value_name = "FILE")]
    pub data_out: Option<PathBuf>,
}
