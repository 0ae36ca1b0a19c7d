//! Command-line front end: synthetic data generation, neighbor mining,
//! statistics, training, inference, the RANSAC baseline, and evaluation,
//! wired for reproducible experiments (all randomness flows from `--seed`).

mod commands;
mod config;
mod error;

use clap::Parser;

use commands::{Cli, Command};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage error.
            if e.use_stderr() {
                let _ = e.print();
                std::process::exit(1);
            }
            let _ = e.print();
            std::process::exit(0);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Stats(args) => commands::stats::run(args),
        Command::Mine(args) => commands::mine::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Infer(args) => commands::infer::run(args),
        Command::Baseline(args) => commands::baseline::run(args),
        Command::Eval(args) => commands::eval::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
