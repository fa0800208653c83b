//! `speciescope`: headless batch commands over a specimen manifest.

mod commands;
mod exit;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "speciescope", version, about = "Measure, map and model evolved specimen collections")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Print a single JSON object on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Manifest CSV (id,image,g0..g11,score,category,split).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Evaluation ledger (JSON lines) replayed over the manifest.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Category,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Genotype,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Tabular,
    Head,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weighting {
    Uniform,
    InverseDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    All,
    NoEmpty,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Random,
    Mutation,
    Crossover,
    Montecarlo,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the seven image measures for every specimen image.
    Measure {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coarse-graining radius for structural complexity.
        #[arg(long, default_value_t = 5)]
        r_cg: usize,
        /// Difference threshold for structural complexity.
        #[arg(long, default_value_t = 0.23)]
        delta: f64,
        /// Skip undecodable images instead of failing.
        #[arg(long)]
        skip_bad: bool,
    },
    /// Pearson correlations between measures and scores.
    Correlate {
        /// Measures CSV written by `measure`.
        #[arg(long)]
        measures: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "both")]
        variant: VariantArg,
        /// Directory for `correlations_<variant>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2-D t-SNE embedding of genotypes or feature vectors.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "genotype")]
        space: SpaceArg,
        /// Feature sidecar (.fvec or .csv), required for `--space feature`.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a predictor and write a model file.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "tabular")]
        kind: ModelKind,
        #[arg(long, value_enum, default_value = "category")]
        target: TargetArg,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Hidden layer widths, e.g. `200,100`; empty for none.
        #[arg(long)]
        hidden: Option<String>,
        /// Phases as `epochs:max_lr`, e.g. `4:1e-3,4:1e-5`.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value = "uniform")]
        weighting: Weighting,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark tabular vs k-NN predictors, or score a saved model.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Evaluate this model on the validation split instead.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        hidden: Option<String>,
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long, default_value = "1,3,5,7")]
        ks: String,
        /// Benchmark CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a 2-D cross-section of a genotype model.
    Map {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        base_id: String,
        #[arg(long)]
        dim_x: usize,
        #[arg(long)]
        dim_y: usize,
        #[arg(long, default_value_t = 32)]
        res: usize,
        #[arg(long, default_value_t = 8)]
        cell_px: u32,
        /// Output stem; writes `<stem>.png` and `<stem>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Propose new genotypes and optionally render them.
    Propose {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "random")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Parent ids for mutation and crossover.
        #[arg(long, value_delimiter = ',')]
        parents: Vec<String>,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Genotype model for Monte Carlo filtering.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        min_score: Option<f64>,
        #[arg(long)]
        category: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        max_attempts: usize,
        /// Proposal manifest CSV.
        #[arg(long)]
        out: PathBuf,
        /// Render toy images into this directory.
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Serve the HTTP API over a data root.
    Serve {
        #[arg(long, env = "SPECIESCOPE_DATA")]
        data: PathBuf,
        #[arg(long, env = "SPECIESCOPE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
    /// Write a seeded synthetic data root.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        image_size: u32,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Also write a 2048-d feature sidecar.
        #[arg(long)]
        features: bool,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match commands::run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(exit::code(&e));
        }
    }
}
