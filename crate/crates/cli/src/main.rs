//! `witunet`: corpus generation, training, denoising, evaluation, gradient
//! checks, and attention benchmarks.

mod commands;
mod pgm;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use witunet::Error;

#[derive(Parser, Debug)]
#[command(name = "witunet", version, about = "Windowed-attention nested U-Net denoiser for low-dose CT")]
struct Cli {
    /// Log verbosity: error, warn, info, debug, trace
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom corpus and manifest
    MakeData(commands::MakeDataCmd),
    /// Train a model on a corpus
    Train(commands::TrainCmd),
    /// Denoise one WTEN image with a checkpoint
    Denoise(commands::DenoiseCmd),
    /// Evaluate a checkpoint against the input baseline
    Eval(commands::EvalCmd),
    /// Finite-difference gradient checks per parameter group
    Gradcheck(commands::GradcheckCmd),
    /// Time windowed against global attention
    Bench(commands::BenchCmd),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_target(false)
        .parse_default_env()
        .init();
    let result = match &cli.command {
        Command::MakeData(c) => commands::make_data(c),
        Command::Train(c) => commands::train(c),
        Command::Denoise(c) => commands::denoise(c),
        Command::Eval(c) => commands::eval(c),
        Command::Gradcheck(c) => commands::gradcheck(c),
        Command::Bench(c) => commands::bench(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
