//! `lobsad`: generate synthetic order book data, run the cross-validated
//! SVDD / SAD experiment, score data with a saved checkpoint and summarize
//! results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lobsad::harness::RunMode;

#[derive(Parser)]
#[command(name = "lobsad", version, about = "Deep SVDD and Deep SAD anomaly detection on order book data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic order book CSV, its label file and the ground truth.
    Generate(GenerateArgs),
    /// Run the repeated k-fold experiment and export results.
    Run(RunArgs),
    /// Score every row of an order book CSV with a saved checkpoint.
    Score(ScoreArgs),
    /// Summarize a finished run from its results.json.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// JSON run configuration; its `synth` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Both,
    SvddOnly,
    SadOnly,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Both => RunMode::Both,
            ModeArg::SvddOnly => RunMode::SvddOnly,
            ModeArg::SadOnly => RunMode::SadOnly,
        }
    }
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for trial seeds (and for synthetic data when no CSV is given).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel trials. 1 is bit-reproducible.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// 1,000 pretraining and 10,000 main epochs.
    #[arg(long)]
    pub paper_scale: bool,
    /// Order book CSV; overrides the config. Without one, synthetic data is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Label file (one row index per line); overrides the config.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV with columns `row,score`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run output directory containing results.json.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SAD_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Run(a) => commands::run(&a),
        Command::Score(a) => commands::score(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
