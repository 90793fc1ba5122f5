//! `msgame`: run, verify and export modified-Schmidt-game experiments.
//!
//! Exit codes: 0 success, 1 verification or game failure, 2 configuration,
//! parse or I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, unreadable input or unwritable output.
    Config(String),
    /// A module error that means the experiment failed.
    Failed(String),
}

/// The one-line report printed on completion.
pub struct Summary {
    pub line: String,
    pub ok: bool,
}

impl Summary {
    pub fn ok(line: String) -> Self {
        Summary { line, ok: true }
    }

    pub fn fail(line: String) -> Self {
        Summary { line, ok: false }
    }
}

#[derive(Debug, Parser)]
#[command(name = "msgame", version, about = "Modified Schmidt games on the space of lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seeds in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for traces and reports.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the number of rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play one game and write its JSONL trace.
    Play(RunArgs),
    /// Replay a trace and re-derive every certificate.
    Verify {
        /// Trace written by `play` or `intersect-demo`.
        trace: PathBuf,
    },
    /// Brute-force badly-approximable margin of a matrix Y.
    CertifyBad(RunArgs),
    /// Margin against orbit systole floor for random Y, as CSV.
    DaniAudit(RunArgs),
    /// Injectivity of the expanding-part map for each weight and degree, as CSV.
    ExpandingCheck(RunArgs),
    /// Play an intersection of strategies and verify every component.
    IntersectDemo(RunArgs),
    /// Run the transversality audit and report the avoidance constants.
    Calibrate(RunArgs),
}

fn run(cli: Cli) -> Result<Summary, CliError> {
    let with_config = |args: &RunArgs| config::load(&args.config);
    match cli.command {
        Command::Play(a) => commands::play_cmd(&with_config(&a)?, &a),
        Command::Verify { trace } => commands::verify_cmd(&trace),
        Command::CertifyBad(a) => commands::certify_bad_cmd(&with_config(&a)?, &a),
        Command::DaniAudit(a) => commands::dani_audit_cmd(&with_config(&a)?, &a),
        Command::ExpandingCheck(a) => commands::expanding_check_cmd(&with_config(&a)?, &a),
        Command::IntersectDemo(a) => commands::intersect_demo_cmd(&with_config(&a)?, &a),
        Command::Calibrate(a) => commands::calibrate_cmd(&with_config(&a)?, &a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(s) => {
            println!("{}", s.line);
            ExitCode::from(if s.ok { 0 } else { 1 })
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
