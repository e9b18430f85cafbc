//! `graspgen`: dataset generation, generator and refiner training, grasp
//! sampling with refinement, and evaluation.
//!
//! Exit codes: 0 success, 2 input error, 3 missing artifact, 4 numerical
//! failure.

mod commands;
mod config;
mod objects;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graspgen_core::Error;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "graspgen", version, about = "Dexterous grasp generation, refinement and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label grasps on every object of the object directory.
    GenDataset {
        #[command(flatten)]
        common: Common,
    },
    /// Train the grasp generator on the stable records of the dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Train the residual refinement network on generator samples.
    TrainRefiner {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Sample grasps for one object, refine, score and write them.
    SampleRefine {
        #[command(flatten)]
        common: Common,
        /// Object file (.obj or .ply).
        #[arg(long)]
        object: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Refinement iterations; the config value when absent.
        #[arg(long)]
        iterations: Option<usize>,
        /// Write an OBJ of the object and of the hand for every grasp.
        #[arg(long)]
        export_scenes: bool,
    },
    /// Report success, coverage and penetration for a grasp record file.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Grasp records to evaluate; the configured dataset when absent.
        #[arg(long)]
        grasps: Option<PathBuf>,
        /// Records whose stable entries are the positives for coverage.
        #[arg(long)]
        positives: Option<PathBuf>,
    },
}

/// A failed command: message and process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn missing(what: &str, path: &std::path::Path) -> Self {
        Self { code: 3, message: format!("missing {what}: {}", path.display()) }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::DegenerateRotation(_) => 4,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.paths.output = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenDataset { common } => commands::gen_dataset(&load(&common)?),
        Command::Train { common, resume } => commands::train(&load(&common)?, resume),
        Command::TrainRefiner { common, resume } => commands::train_refiner(&load(&common)?, resume),
        Command::SampleRefine { common, object, n, iterations, export_scenes } => {
            commands::sample_refine(&load(&common)?, &object, n, iterations, export_scenes)
        }
        Command::Eval { common, grasps, positives } => commands::eval(&load(&common)?, grasps, positives),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
