mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trajgeos::evaluation::Grouping;
use trajgeos::ingest::Schema;
use trajgeos::model::{Ablation, OrientationMode};

#[derive(Parser)]
#[command(
    name = "trajgeos",
    version,
    about = "Next-location prediction over check-in trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and segment a raw check-in file into a dataset directory.
    Preprocess(PreprocessArgs),
    /// Build the global trajectory graph from a dataset's training data.
    BuildGraph(BuildGraphArgs),
    /// Train a model, keeping the best and last checkpoints.
    Train(TrainArgs),
    /// Score a trained checkpoint on the test samples.
    Evaluate(EvaluateArgs),
    /// Train the full model and the four ablated variants.
    Ablate(AblateArgs),
    /// Train every point of a configuration grid.
    Sweep(SweepArgs),
    /// Group-wise accuracy and distance-error tables from a prediction dump.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long, value_parser = clap::value_parser!(Schema))]
    pub schema: Schema,
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Skip malformed lines instead of failing on the first one.
    #[arg(long)]
    pub skip_malformed: bool,
    /// Timezone offset in minutes for schemas without one.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub tz_offset: i32,
}

#[derive(Args)]
pub struct BuildGraphArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Model configuration: a TOML file plus per-field overrides.
#[derive(Args, Clone)]
pub struct ModelArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(Ablation))]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub recent_weeks: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(OrientationMode))]
    pub orientation: Option<OrientationMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Treat the data as category-free (no category embedding or head).
    #[arg(long)]
    pub dallas_mode: bool,
    /// Force the category prediction head on.
    #[arg(long)]
    pub category_head: bool,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub graph: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Continue from the last checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many completed epochs.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Best,
    Last,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub graph: PathBuf,
    /// Output directory of `trajgeos train`.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    pub checkpoint: Which,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub graph: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Repeats per variant with consecutive seeds; metrics are averaged.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub graph: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// TOML file listing values per axis (alpha, recent_weeks, n_global,
    /// n_user, orientation, ablation).
    #[arg(long, value_name = "PATH")]
    pub grid: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory of `trajgeos evaluate`.
    #[arg(long, value_name = "DIR")]
    pub predictions: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Groupings to compute; defaults to every one the data supports.
    #[arg(long, value_parser = clap::value_parser!(Grouping))]
    pub grouping: Vec<Grouping>,
    #[arg(long, default_value_t = 50.0)]
    pub record_bin: f64,
    #[arg(long, default_value_t = 0.5)]
    pub entropy_bin: f64,
    /// `category<TAB>super-category` mapping, required for super_category.
    #[arg(long, value_name = "PATH")]
    pub super_categories: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::BuildGraph(a) => commands::build_graph(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Analyze(a) => commands::analyze(&a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
