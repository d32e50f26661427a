//! Command-line pipeline: simulate, extract, classify, embed, build graphs,
//! train, evaluate, ablate and check gradients.

pub mod config;
mod learn;
pub mod manifest;
mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use reviewgraph_core::graph::AblationMode;
use thiserror::Error;

use config::RunConfig;
use manifest::{Manifest, Split};

/// Failure classes; each maps to a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("endpoint failure: {0}")]
    Endpoint(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Endpoint(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::GradCheck(_) => 5,
        }
    }
}

fn parse_ablation(s: &str) -> Result<AblationMode, String> {
    AblationMode::parse(s).ok_or_else(|| {
        let names: Vec<&str> = AblationMode::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown ablation mode {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?}; expected train, val or test"))
}

#[derive(Debug, Parser)]
#[command(
    name = "reviewgraph",
    version,
    about = "Debate-graph review outcome prediction pipeline"
)]
pub struct Cli {
    /// Run configuration JSON.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-paper work; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    pub force: bool,
    /// Graph ablation mode; overrides the config.
    #[arg(long, global = true, value_parser = parse_ablation, value_name = "MODE")]
    pub ablation: Option<AblationMode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    /// JSON-lines dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; defaults to `<work_dir>/train` (or `ablate`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to `<work_dir>/train/checkpoint.rvgc`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    /// JSON object mapping paper_id to another system's per-paper score;
    /// adds a Welch t-test against this model's per-paper correctness.
    #[arg(long, value_name = "PATH")]
    pub compare: Option<PathBuf>,
    /// Report file; defaults to `<work_dir>/eval/<split>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Perturbs the analytic gradients; negative control for tests.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Output directory for the manifest and its artifacts.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 50)]
    pub val: usize,
    #[arg(long, default_value_t = 50)]
    pub test: usize,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the staged reviewer/author debate for each paper.
    Simulate(ManifestArgs),
    /// Extract opinion triples from transcripts.
    Extract(ManifestArgs),
    /// Assign an evaluation dimension to every reviewer opinion.
    Classify(ManifestArgs),
    /// Embed node texts, reusing the embedding cache.
    Embed(ManifestArgs),
    /// Build, ablate and validate debate graphs.
    BuildGraph(ManifestArgs),
    /// Train on the train split with early stopping on val.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Evaluate(EvalArgs),
    /// Train and evaluate every ablation mode with a shared seed.
    Ablate(TrainArgs),
    /// Finite-difference check of the full model on a seeded random graph.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic labeled dataset with triples, dims and embeddings.
    Synthesize(SynthesizeArgs),
}

/// Resolved settings shared by all commands.
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub jobs: usize,
    pub force: bool,
}

impl Context {
    fn from_cli(cli: &Cli) -> Result<Context, CliError> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        config.apply_overrides(cli.seed, cli.ablation, cli.jobs);
        config.validate()?;
        Ok(Context {
            seed: config.train.seed,
            config,
            jobs: cli.jobs,
            force: cli.force,
        })
    }

    fn manifest(&self, path: &std::path::Path) -> Result<Manifest, CliError> {
        Manifest::load(path, self.config.paths.work_dir.clone())
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Simulate(a) => pipeline::simulate(&ctx, &ctx.manifest(&a.manifest)?),
        Command::Extract(a) => pipeline::extract(&ctx, &ctx.manifest(&a.manifest)?),
        Command::Classify(a) => pipeline::classify(&ctx, &ctx.manifest(&a.manifest)?),
        Command::Embed(a) => pipeline::embed(&ctx, &ctx.manifest(&a.manifest)?),
        Command::BuildGraph(a) => pipeline::build_graphs(&ctx, &ctx.manifest(&a.manifest)?),
        Command::Train(a) => learn::train(&ctx, &ctx.manifest(&a.manifest)?, a.out.clone()),
        Command::Evaluate(a) => learn::evaluate(&ctx, &ctx.manifest(&a.manifest)?, a),
        Command::Ablate(a) => learn::ablate(&ctx, &ctx.manifest(&a.manifest)?, a.out.clone()),
        Command::Gradcheck(a) => learn::gradcheck(&ctx, a),
        Command::Synthesize(a) => pipeline::synthesize(&ctx, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
