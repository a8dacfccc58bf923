use clap::{Parser, Subcommand};
use std::process::ExitCode;

use dncc_cli::commands::{ablate, diversity, train, verify};

/// Negative-correlation ensemble classification workbench.
#[derive(Parser)]
#[command(name = "dncc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and write metrics plus checkpoints.
    Train(train::TrainArgs),
    /// Run the identity sweeps and the full-model gradient check.
    Verify(verify::VerifyArgs),
    /// Compare the pairwise diversity/accuracy of two checkpoints.
    Diversity(diversity::DiversityArgs),
    /// Sweep ensemble size, lambda, or split position.
    Ablate(ablate::AblateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train::run(args),
        Command::Verify(args) => verify::run(args),
        Command::Diversity(args) => diversity::run(args),
        Command::Ablate(args) => ablate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
