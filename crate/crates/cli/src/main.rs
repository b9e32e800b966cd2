//! Command-line surface for the lead toolkit: data preparation, offline pair
//! building, training, evaluation, and representation export.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "lead",
    version,
    about = "Dictionary-guided contrastive fine-tuning for Chinese spell checking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, normalize, validate, and summarize a corpus
    Prepare(commands::prepare::PrepareArgs),
    /// Precompute contrastive mini-batches for offline training
    BuildPairs(commands::build_pairs::BuildPairsArgs),
    /// Fine-tune the spell-checking model
    Train(commands::train::TrainArgs),
    /// Score a checkpoint or a prediction file on a test corpus
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Export per-character representation vectors
    ExportReps(commands::export_reps::ExportRepsArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prepare(args) => commands::prepare::run(args),
        Command::BuildPairs(args) => commands::build_pairs::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::ExportReps(args) => commands::export_reps::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
