//! The `dpkws` binary drives the whole pipeline: synthesize a labeled
//! keyword corpus, train the acoustic model (with or without data
//! parameters), evaluate FRR at a fixed false-alarm rate, and emit
//! temperature-distribution reports.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Marker for configuration-level failures (exit code 2; runtime faults
/// exit with 1).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(
    name = "dpkws",
    version,
    about = "Keyword-spotting trainer with learnable per-class and per-utterance logit temperatures"
)]
struct Cli {
    /// TOML run configuration; command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled corpus and its multicondition augmentation.
    Gen(commands::gen::GenArgs),
    /// Train an acoustic model on a generated corpus.
    Train(commands::train::TrainArgs),
    /// Score the eval split and report FRR at the target FA rate.
    Eval(commands::eval::EvalArgs),
    /// Summarize per-epoch sigma snapshots against the corpus manifest.
    Report(commands::report::ReportArgs),
}

fn exit_code_for(err: &anyhow::Error) -> ExitCode {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return ExitCode::from(2);
        }
        if let Some(core) = cause.downcast_ref::<dpkws_core::CoreError>() {
            if matches!(core, dpkws_core::CoreError::InvalidConfig(_)) {
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config::RunConfig::load(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Gen(args) => commands::gen::run(args, cfg),
        Command::Train(args) => commands::train::run(args, cfg),
        Command::Eval(args) => commands::eval::run(args, cfg),
        Command::Report(args) => commands::report::run(args, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}
