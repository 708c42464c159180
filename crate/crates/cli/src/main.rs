use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod report;

#[derive(Parser)]
#[command(name = "agetrace", version, about = "Temporal image forensics: simulate sensor ageing, detect defects, approximate image age, audit classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides, shared by every analysis command.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON object or `key = value` lines; dotted keys address nested tables
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set knn.block_size=100` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth from a JSON spec
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory: images/, manifest.jsonl, ground_truth.json, spec_echo.json
        #[arg(long)]
        out: PathBuf,
        /// Summary report path (stdout if omitted)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Locate defects in dark fields and estimate their onsets over the trusted scenes
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit an age estimator on the trusted (labelled) scenes
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorKind,
        /// Report of `detect`; required by the ml and nb estimators
        #[arg(long)]
        defects: Option<PathBuf>,
        /// Model file to write
        #[arg(long)]
        model: PathBuf,
        /// Required by the knn estimator (block placement, validation split)
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Estimate the age of the untrusted (unlabelled) scenes
    Approximate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Simulator ground truth; enables error metrics
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Order acquisition sessions by PRNU similarity and place queries
    Order {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Audit a trained classifier for content bias with average images
    Diagnose {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Seed of the average-image subsampling
        #[arg(long)]
        seed: Option<u64>,
        /// Spot masks (PNG, 0 = drop): one shared or one per test image
        #[arg(long)]
        mask: Vec<PathBuf>,
        /// Also write the accuracy table as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    Ml,
    NbNe,
    NbHe,
    NbKde,
    Knn,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config, spec, manifest or model (exit 2).
    Usage(String),
    /// Filesystem or image codec failure (exit 3).
    Io(String),
    /// A broken internal invariant (exit 4).
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<agetrace::Error> for CliError {
    fn from(e: agetrace::Error) -> Self {
        match e {
            agetrace::Error::Io { .. } | agetrace::Error::Codec { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { spec, out, report } => commands::simulate(&spec, &out, report.as_deref()),
        Command::Detect { manifest, out, config } => commands::detect(&manifest, out.as_deref(), &config),
        Command::Train { manifest, estimator, defects, model, seed, out, config } => {
            commands::train(&manifest, estimator, defects.as_deref(), &model, seed, out.as_deref(), &config)
        }
        Command::Approximate { manifest, model, ground_truth, out } => {
            commands::approximate(&manifest, &model, ground_truth.as_deref(), out.as_deref())
        }
        Command::Order { manifest, out, config } => commands::order(&manifest, out.as_deref(), &config),
        Command::Diagnose { manifest, model, seed, mask, csv, out, config } => {
            commands::diagnose(&manifest, &model, seed, &mask, csv.as_deref(), out.as_deref(), &config)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| run(cli)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| (*s).to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(CliError::Internal(msg))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
