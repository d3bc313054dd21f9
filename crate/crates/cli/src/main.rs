use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use parcap::{execute, write_outputs, Emit, RunConfig, Status};

#[derive(Parser)]
#[command(name = "parcap", version, about = "Capacity, Wiener-type series and h-Brownian motion near a boundary pole")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task described by a JSON configuration.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        emit: Emit,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run { config, emit, seed, out } = cli.command;
    let mut cfg = match RunConfig::from_path(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let outcome = match execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match write_outputs(&cfg, &outcome, &out, emit) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match &outcome.status {
        Status::Done => {}
        Status::Inconclusive(r) => eprintln!("inconclusive: {r}"),
        Status::Failed(r) => eprintln!("failed: {r}"),
    }
    ExitCode::from(outcome.status.exit_code() as u8)
}
