//! `dyncal` — command-line driver for temporal-window calibration
//! experiments: ingest raw logs, run the windowed experiment, generate
//! synthetic drift data, and emit plot-ready reports.

mod commands;
mod manifest;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use dyncal_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "dyncal", version, about = "Calibration dynamics over temporal training windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and canonicalize a raw interaction log.
    Ingest(commands::IngestArgs),
    /// Run the windowed calibration experiment on a canonical dataset.
    Run(commands::RunArgs),
    /// Generate a synthetic drift dataset with planted ground truth.
    Synth(commands::SynthArgs),
    /// Recompute plot-ready per-window and per-segment tables.
    Report(commands::ReportArgs),
    /// Tabulate window counts and cell sizes for candidate widths.
    Windows(commands::WindowsArgs),
}

/// Exit codes: 0 success, 1 usage, 2 data error, 3 training failure.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Diverged { .. } | CoreError::AllPointsDiverged => 3,
                CoreError::InvalidConfig(_)
                | CoreError::InvalidHyperparams(_)
                | CoreError::InvalidGeneratorSpec(_)
                | CoreError::InvalidWindowWidth
                | CoreError::LevelOutOfRange { .. } => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    2
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Run(args) => commands::run(args),
        Command::Synth(args) => commands::synth(args),
        Command::Report(args) => commands::report(args),
        Command::Windows(args) => commands::windows(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
