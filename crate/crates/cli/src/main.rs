//! `drhdr`: data generation, training, inference, evaluation and profiling.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drhdr_core::ErrorClass;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(drhdr_core::Error),
}

impl From<drhdr_core::Error> for CliError {
    fn from(e: drhdr_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "drhdr", version, about = "Multi-exposure HDR fusion: data, training, inference and profiling")]
pub struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Run on a single thread so results are bit-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// drhdr, ahdr, variant-a, variant-b or ours-star.
    #[arg(long)]
    pub variant: Option<String>,
    /// paper or tiny.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic exposure stacks with ground truth.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stack size as HxW.
        #[arg(long)]
        size: Option<String>,
    },
    /// Train a network on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Total epochs; the three-phase schedule is compressed to fit.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Square crop size, 0 for whole stacks.
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Stacks held out for validation.
        #[arg(long)]
        val: Option<usize>,
        /// Multiplier on every learning rate of the schedule.
        #[arg(long)]
        lr_scale: Option<f64>,
        /// Continue from a `last.ckpt`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run a trained network on every stack of a directory and write PFM files.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// PSNR and PSNR-mu of predictions against ground truth.
    Eval {
        /// Directory of `<id>.pfm` predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of `<id>.pfm` or `<id>/gt.pfm` ground truth.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Per-layer weights and multiply-accumulates.
    Profile {
        #[command(flatten)]
        net: NetArgs,
        /// Input size as HxW.
        #[arg(long)]
        hw: Option<String>,
        /// standard or weight-applications.
        #[arg(long)]
        convention: Option<String>,
        /// Also report ratios against another variant (`baseline` is ahdr).
        #[arg(long)]
        compare: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
