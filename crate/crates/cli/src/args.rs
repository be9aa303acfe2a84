use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use convcal::PolicyKind;

#[derive(Debug, Parser)]
#[command(
    name = "convcal",
    version,
    about = "Calibrated answer selection for conversational QA"
)]
pub struct Cli {
    /// JSON config file; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Reject records with unknown keys instead of warning.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Worker threads (default: all cores). Output order does not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every record: confidence, uncertainty, prediction, correctness.
    Score(ScoreArgs),
    /// Fit temperatures and write calibration reports.
    Calibrate(CalibrateArgs),
    /// Replay dumped records through history policies and report F1.
    Evaluate(EvaluateArgs),
    /// Run paired policy comparisons in the synthetic world.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct Temperatures {
    #[arg(long)]
    pub tau_conf: Option<f64>,
    #[arg(long)]
    pub tau_uncer: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Records JSONL, `-` for stdin.
    pub input: PathBuf,
    /// Output JSONL (default stdout).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tau: Temperatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Confidence,
    Uncertainty,
    Both,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Temperature grid as `lo:hi:step`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Directory for `calibration_<mode>.json` and `reliability_<mode>.csv`.
    /// Without it, reports go to stdout as JSON lines.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupArg {
    None,
    Turn,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub input: PathBuf,
    /// Policies to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<PolicyKind>,
    /// Threshold for every selective policy.
    #[arg(long, conflicts_with = "threshold_from")]
    pub threshold: Option<f64>,
    /// `median` of the input's scores, or a records file whose median is used.
    #[arg(long)]
    pub threshold_from: Option<String>,
    /// Added to a median threshold.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub threshold_offset: f64,
    #[arg(long, value_enum, default_value_t = GroupArg::None)]
    pub group_by: GroupArg,
    #[command(flatten)]
    pub tau: Temperatures,
    /// Report CSV (default stdout).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Policies to run, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<PolicyKind>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub dialogues: Option<usize>,
    #[arg(long, env = "CONVCAL_SEED")]
    pub seed: Option<u64>,
    /// Add exact expected F1 next to the Monte Carlo means (tiny noiseless worlds only).
    #[arg(long, conflicts_with = "sweep_threshold")]
    pub oracle: bool,
    /// Mean F1 of each selective policy over thresholds `lo:hi:step`.
    #[arg(long)]
    pub sweep_threshold: Option<String>,
    /// Write synthetic logit records for `--dialogues` dialogues to this
    /// file instead of running an experiment.
    #[arg(long, conflicts_with_all = ["oracle", "sweep_threshold"])]
    pub dump_records: Option<PathBuf>,
    /// CSV output (default stdout).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
