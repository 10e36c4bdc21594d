//! `mipipe` command-line front end.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mipipe::{EngineConfig, Method};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "mipipe", version, about = "Multiple-imputation differential analysis of incomplete matrices")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MIPIPE_THREADS")]
    threads: Option<usize>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub(crate) enum Command {
    /// Generate one of the simulated benchmark designs.
    Simulate(SimulateArgs),
    /// Mask a fraction of observed cells completely at random.
    Ampute(AmputeArgs),
    /// Optional log2 transform, then quantile normalisation.
    Normalize(NormalizeArgs),
    /// Keep rows with enough observed values in every condition.
    Filter(FilterArgs),
    /// Impute a matrix D times and store the stack.
    Impute(ImputeArgs),
    /// Full workflow: impute, pool, moderate and test every contrast.
    Analyze(AnalyzeArgs),
    /// Roll an imputed peptide stack up to proteins.
    Aggregate(AggregateArgs),
    /// Score report decisions against truth labels.
    Evaluate(EvaluateArgs),
    /// Compare the multiple-imputation workflow with single imputation on simulated data.
    Bench(BenchArgs),
}

/// Number of imputations: a positive count or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub(crate) enum Draws {
    Auto,
    Fixed(usize),
}

impl Draws {
    pub(crate) fn fixed(self) -> Option<usize> {
        match self {
            Draws::Auto => None,
            Draws::Fixed(d) => Some(d),
        }
    }
}

fn parse_draws(s: &str) -> Result<Draws, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Draws::Auto);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(d) => Ok(Draws::Fixed(d)),
        Err(_) => Err(format!("expected a count or `auto`, got `{s}`")),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let v = parse_fraction(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn parse_design_id(s: &str) -> Result<u8, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        "3" => Ok(3),
        _ => Err(format!("unknown design `{s}`; expected 1, 2 or 3")),
    }
}

fn parse_contrast(s: &str) -> Result<(String, String), String> {
    match s.split_once(',') {
        Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
            Ok((a.trim().to_string(), b.trim().to_string()))
        }
        _ => Err(format!("expected `a,b`, got `{s}`")),
    }
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct EngineArgs {
    /// Imputation engine.
    #[arg(long, default_value = "mle", value_parser = parse_method)]
    pub method: Method,
    /// Neighbours for knn.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Components for pca.
    #[arg(long, default_value_t = 2)]
    pub ncp: usize,
    /// Trees for rf.
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    /// Passes of the iterative engines.
    #[arg(long, default_value_t = 10)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// EM iteration cap for mle.
    #[arg(long, default_value_t = 1000)]
    pub em_max_iter: usize,
    /// Fill mle cells with the conditional mean instead of a draw.
    #[arg(long)]
    pub mle_deterministic: bool,
}

impl EngineArgs {
    pub(crate) fn config(&self) -> EngineConfig {
        EngineConfig {
            method: self.method,
            k_neighbors: self.k,
            n_components: self.ncp,
            rf_trees: self.trees,
            max_iter: self.max_iter,
            tol: self.tol,
            em_max_iter: self.em_max_iter,
            mle_deterministic: self.mle_deterministic,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct MatrixIn {
    /// Input matrix CSV (`row_id[,protein_id],sample...`).
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    /// The second column holds protein accessions.
    #[arg(long)]
    pub protein_column: bool,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct SimulateArgs {
    #[arg(long, value_parser = parse_design_id)]
    pub design: u8,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub design_out: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct AmputeArgs {
    #[command(flatten)]
    pub matrix: MatrixIn,
    /// Fraction of all cells to mask.
    #[arg(long, value_parser = parse_fraction)]
    pub prop: f64,
    #[arg(long)]
    pub seed: u64,
    /// Keep at least one observed value per row within each condition.
    #[arg(long, value_name = "CSV")]
    pub design: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct NormalizeArgs {
    #[command(flatten)]
    pub matrix: MatrixIn,
    /// Take log2 of raw intensities first.
    #[arg(long)]
    pub log2: bool,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct FilterArgs {
    #[command(flatten)]
    pub matrix: MatrixIn,
    #[arg(long, value_name = "CSV")]
    pub design: PathBuf,
    /// Minimum observed values per condition.
    #[arg(long, value_name = "K")]
    pub min_obs: usize,
    /// Also drop peptides shared between proteins.
    #[arg(long, requires = "protein_column")]
    pub unique_peptides: bool,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct ImputeArgs {
    #[command(flatten)]
    pub matrix: MatrixIn,
    #[arg(long, value_name = "CSV")]
    pub design: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "auto", value_parser = parse_draws)]
    pub draws: Draws,
    #[arg(long)]
    pub seed: u64,
    /// Stack manifest to write; draws are stored beside it.
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct AnalyzeArgs {
    #[command(flatten)]
    pub matrix: MatrixIn,
    #[arg(long, value_name = "CSV")]
    pub design: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "auto", value_parser = parse_draws)]
    pub draws: Draws,
    #[arg(long)]
    pub seed: u64,
    /// Threshold on BH-adjusted p-values.
    #[arg(long, default_value_t = 0.01, value_parser = parse_threshold)]
    pub fdr: f64,
    /// Condition pair to test, repeatable; default all pairs.
    #[arg(long, value_name = "A,B", value_parser = parse_contrast)]
    pub contrast: Vec<(String, String)>,
    #[arg(long)]
    pub log2: bool,
    #[arg(long)]
    pub normalize: bool,
    /// Minimum observed values per condition.
    #[arg(long, value_name = "K")]
    pub filter: Option<usize>,
    /// Test proteins: drop shared peptides and sum the rest per protein.
    #[arg(long, requires = "protein_column")]
    pub aggregate: bool,
    /// Divide the contrast by the moderated variance instead of its root.
    #[arg(long = "eq9-literal")]
    pub literal: bool,
    /// Write pooled coefficients and variances.
    #[arg(long, value_name = "CSV")]
    pub dump_pooled: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct AggregateArgs {
    /// Stack manifest of peptide draws.
    #[arg(long = "in", value_name = "JSON")]
    pub input: PathBuf,
    /// Stack manifest to write.
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct EvaluateArgs {
    #[arg(long, value_name = "CSV")]
    pub report: PathBuf,
    /// `row_id,de` labels.
    #[arg(long, value_name = "CSV")]
    pub truth: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct BenchArgs {
    #[arg(long, value_parser = parse_design_id)]
    pub design: u8,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Missing-value fractions.
    #[arg(long, value_delimiter = ',', value_parser = parse_fraction, default_value = "0.01,0.05,0.1,0.15,0.2,0.25")]
    pub mv: Vec<f64>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "auto", value_parser = parse_draws)]
    pub draws: Draws,
    #[arg(long, default_value_t = 0.01, value_parser = parse_threshold)]
    pub fdr: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long = "eq9-literal")]
    pub literal: bool,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Summary table; default `<out stem>_summary.csv`.
    #[arg(long, value_name = "CSV")]
    pub summary_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    if let Err(e) = pool.build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::FAILURE;
    }

    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
