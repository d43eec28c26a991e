//! `lexfact`: reproducible embedding pipelines over explicit co-occurrence
//! statistics. Every output directory gets a manifest recording inputs (by
//! digest), parameters (defaults included), and format versions; rerunning a
//! command with the same manifest and one thread reproduces outputs byte for
//! byte.

mod commands;
mod manifest;

use clap::Parser;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lexfact",
    version,
    about = "Train and inspect word embeddings by explicit weighted factorization of co-occurrence statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Count co-occurrence pairs and write the table + vocabulary
    BuildCooc(commands::BuildCoocArgs),
    /// Train embeddings against a co-occurrence table
    Train(commands::TrainArgs),
    /// Verification oracles and similarity queries
    #[command(subcommand)]
    Eval(commands::EvalCommand),
    /// Write embeddings as text or a binary checkpoint
    Export(commands::ExportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BuildCooc(args) => commands::run_build_cooc(args),
        Command::Train(args) => commands::run_train(args),
        Command::Eval(cmd) => commands::run_eval(cmd),
        Command::Export(args) => commands::run_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Stable exit codes: 2 bad arguments, 3 I/O or malformed files, 4 empty
/// corpus/table, 5 non-finite loss, 6 unknown token, 1 anything else.
/// (Unparseable command lines exit 2 via the parser.)
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<lexfact::Error>() {
        use lexfact::Error::*;
        return match e {
            InvalidArgument(_) | DimensionMismatch(_) => 2,
            MalformedFile { .. } | Io(_) => 3,
            EmptyCorpus | EmptyCooc => 4,
            NonFiniteLoss { .. } => 5,
            UnknownToken(_) => 6,
            _ => 1,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}
