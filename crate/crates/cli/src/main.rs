//! `interleave`: experiment runner for codebook interleaving patterns.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "interleave", version, about = "Codebook interleaving patterns, exactness oracles and a toy decoder")]
struct Cli {
    /// Output directory (default: $INTERLEAVE_OUT_DIR/<command> or ./interleave-out/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat TOML config, or a previous run's manifest.json. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect, validate and count pattern steps.
    #[command(subcommand)]
    Patterns(PatternsCmd),
    /// Exhaustive TV between a toy joint and each pattern's induced law.
    Exactness(commands::exactness::ExactnessArgs),
    /// Train the toy decoder (default: overfit the memorization set).
    Train(commands::train::TrainArgs),
    /// Sample a token grid from a checkpoint.
    Generate(commands::generate::GenerateArgs),
    /// Prompted greedy continuations scored against their sources.
    Memorize(commands::memorize::MemorizeArgs),
    /// Quantized chroma of a WAV file.
    Chroma(commands::chroma::ChromaArgs),
    /// Write a sine tone as 16-bit WAV.
    Tone(commands::chroma::ToneArgs),
    /// Fit residual codebooks on synthetic latents and tokenize them.
    Tokenize(commands::tokenize::TokenizeArgs),
}

#[derive(Subcommand)]
enum PatternsCmd {
    /// Print a pattern's step layout.
    Show(commands::patterns::ShowArgs),
    /// Check a JSON pattern for partition, ordering and step rules.
    Validate(ValidateArgs),
    /// Exact and nominal step counts of every mono pattern.
    Bench(commands::patterns::BenchArgs),
}

#[derive(Args)]
struct ValidateArgs {
    file: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = commands::Context {
        out: cli.out,
        config: cli.config,
    };
    let result = match cli.command {
        Command::Patterns(PatternsCmd::Show(a)) => commands::patterns::show(&ctx, a),
        Command::Patterns(PatternsCmd::Validate(a)) => commands::patterns::validate(&ctx, &a.file),
        Command::Patterns(PatternsCmd::Bench(a)) => commands::patterns::bench(&ctx, a),
        Command::Exactness(a) => commands::exactness::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Generate(a) => commands::generate::run(&ctx, a),
        Command::Memorize(a) => commands::memorize::run(&ctx, a),
        Command::Chroma(a) => commands::chroma::chroma(&ctx, a),
        Command::Tone(a) => commands::chroma::tone(&ctx, a),
        Command::Tokenize(a) => commands::tokenize::run(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
