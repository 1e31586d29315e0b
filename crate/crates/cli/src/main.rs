//! `diarize`: simulate meetings, train and run the diarization network,
//! score RTTM output, and verify the build.
//!
//! Exit codes: 0 success, 1 check or validation failure, 2 usage error.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::OUTPUT_ROOT_ENV;

#[derive(Parser)]
#[command(name = "diarize", version, about = "End-to-end neural meeting diarization")]
struct Cli {
    /// Root for default output directories (`<root>/<command>`).
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a speaker corpus as WAV files plus an index.
    SynthCorpus(commands::synth::Args),
    /// Generate meetings: WAV mixtures, reference RTTMs and a spec file.
    Simulate(commands::simulate::Args),
    /// Train a model, writing checkpoints and a CSV log.
    Train(commands::train::Args),
    /// Run a checkpoint on audio files, writing RTTMs and probability dumps.
    Infer(commands::infer::Args),
    /// Score hypothesis RTTMs against references.
    Score(commands::score::Args),
    /// Run the invariant suite.
    Selfcheck(commands::selfcheck::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let root = cli.output_root.as_deref();
    let res = match cli.command {
        Command::SynthCorpus(a) => commands::synth::run(a, root),
        Command::Simulate(a) => commands::simulate::run(a, root),
        Command::Train(a) => commands::train::run(a, root),
        Command::Infer(a) => commands::infer::run(a, root),
        Command::Score(a) => commands::score::run(a, root),
        Command::Selfcheck(a) => commands::selfcheck::run(a, root),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
