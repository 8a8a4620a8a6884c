//! `overcount`: synthesize data, train count-distribution models, evaluate
//! them, and produce maps, rankings, and clusterings.

mod commands;
mod grid;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overcount::counts::DEFAULT_CATEGORIES;

#[derive(Debug, Parser)]
#[command(name = "overcount", version, about = "Predict ground-level object count distributions from overhead tiles")]
pub struct Cli {
    /// Directory holding default per-command output directories.
    #[arg(long, global = true, env = "OVERCOUNT_OUT", default_value = "out")]
    pub out_root: PathBuf,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic geotagged dataset with known per-tile rates.
    Synth(SynthArgs),
    /// Summarize a dataset's object counts.
    Stats(StatsArgs),
    /// Train one model per family on a seeded split and report held-out likelihood.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Render a baseline or model heatmap for one category.
    Map(MapArgs),
    /// Rank tiles by expected count of one category.
    Topk(TopkArgs),
    /// Cluster predicted expected-count vectors over a tile grid.
    Cluster(ClusterArgs),
}

#[derive(Debug, Args)]
pub struct CategoryArgs {
    /// Category index, or name when --labels is given.
    #[arg(long, default_value = "0")]
    pub category: String,
    /// Text file with one category name per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub categories: Option<usize>,
    /// Latent field driving tile brightness.
    #[arg(long, value_parser = ["uniform", "lon-gradient"])]
    pub latent: Option<String>,
    /// Also write a dense tile grid, e.g. `16x16`.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub dataset: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CATEGORIES)]
    pub categories: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated families: poisson, nb, gaussian.
    #[arg(long, value_delimiter = ',')]
    pub family: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected family; a mismatch with the checkpoint is an error.
    #[arg(long)]
    pub family: Option<String>,
    /// Split seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Evaluate every sample instead of the held-out split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Dataset for a kernel-smoothed baseline map.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub baseline: Option<PathBuf>,
    /// Checkpoint for a model heatmap (needs --grid).
    #[arg(long, requires = "grid")]
    pub checkpoint: Option<PathBuf>,
    /// Tile-grid JSON; for baselines only its geometry is used.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Baseline raster size when no grid file is given.
    #[arg(long, default_value_t = 32)]
    pub rows: usize,
    #[arg(long, default_value_t = 32)]
    pub cols: usize,
    /// Gaussian kernel bandwidth in degrees.
    #[arg(long, default_value_t = overcount::geomap::DEFAULT_BANDWIDTH_DEG)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = DEFAULT_CATEGORIES)]
    pub categories: usize,
    #[command(flatten)]
    pub category: CategoryArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TopkArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose tiles are ranked.
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub category: CategoryArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = overcount::geomap::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cluster log expected counts instead of raw ones.
    #[arg(long)]
    pub log_space: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
