use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfpo::harness::{compare_report, parse_config_with, run, Overrides};

#[derive(Parser)]
#[command(name = "mfpo", version, about = "Federated policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a configuration file and write per-round metrics.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(short = 'N', long)]
        agents: Option<usize>,
        #[arg(short = 'K', long = "local-steps")]
        local_steps: Option<usize>,
        #[arg(short = 'D', long)]
        batch: Option<usize>,
    },
    /// Rounds and interactions needed to reach a return threshold.
    Report {
        #[arg(required = true, num_args = 2..)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        threshold: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out, agents, local_steps, batch } => {
            let overrides = Overrides { seed, output: out, agents, local_steps, batch };
            std::fs::read_to_string(&config)
                .map_err(mfpo::Error::from)
                .and_then(|text| parse_config_with(&text, &overrides))
                .and_then(|cfg| run(&cfg))
                .map(|summaries| {
                    for s in summaries {
                        println!("{s}");
                    }
                })
        }
        Command::Report { csv, threshold } => compare_report(&csv, threshold).map(|r| print!("{r}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
