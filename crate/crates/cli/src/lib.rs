//! Command-line driver: tokenizer training, deduplication, pretraining,
//! fine-tuning, evaluation and budget reporting.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

pub use config::RunConfig;

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "TINYT5_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] tinyt5::Error),
}

impl CliError {
    /// 1 for usage errors, 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tinyt5",
    version,
    about = "Desk-scale T5-style pretraining, fine-tuning and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct CommandArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[command(flatten)]
    pub settings: RunConfig,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a BPE vocabulary with reserved sentinels.
    TokenizerTrain(CommandArgs),
    /// Remove near-duplicate paragraphs from a corpus.
    Dedup(CommandArgs),
    /// Pretrain on the denoising mixture.
    Pretrain(CommandArgs),
    /// Fine-tune on a task and select the best epoch by validation ROUGE-L.
    Finetune(CommandArgs),
    /// Decode a dataset and score it with the task metric.
    Evaluate(CommandArgs),
    /// Print token-to-parameter ratios of the reference pretraining runs.
    Budget(CommandArgs),
}

fn command_with_help() -> clap::Command {
    let keys = config::keys_help();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let keys = keys.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_help(keys));
    }
    cmd.after_help(format!(
        "{keys}\nEnvironment: {THREADS_ENV} sets the number of worker threads.\nExit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure."
    ))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command_with_help().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(args: CommandArgs) -> Result<RunConfig, CliError> {
    let base = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    Ok(base.overlay(args.settings))
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::TokenizerTrain(a) => commands::tokenizer_train(&resolve(a)?),
        Command::Dedup(a) => commands::dedup(&resolve(a)?),
        Command::Pretrain(a) => commands::pretrain(&resolve(a)?),
        Command::Finetune(a) => commands::finetune(&resolve(a)?),
        Command::Evaluate(a) => commands::evaluate(&resolve(a)?),
        Command::Budget(a) => {
            print!("{}", commands::budget(&resolve(a)?)?);
            Ok(())
        }
    }
}
