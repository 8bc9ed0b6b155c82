//! `ctscan`: runs one pipeline command from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ctscan::pipeline::{run_pipeline, Command, PipelineConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ctscan",
    version,
    about = "Transfer-learning pipeline for two-class CT image classification"
)]
struct Args {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// scan, train, evaluate, report, compare, or `all` for the first four
    /// followed by a comparison of this run.
    #[arg(long, default_value = "all")]
    command: String,

    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn commands(name: &str) -> ctscan::Result<Vec<Command>> {
    if name == "all" {
        Ok(Command::ALL.to_vec())
    } else {
        Ok(vec![name.parse()?])
    }
}

fn run(args: &Args) -> ctscan::Result<()> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let sequence = commands(&args.command)?;
    // in `all`, compare the fresh run unless the config lists what to compare
    if sequence.len() > 1 && config.compare.runs.is_empty() && config.compare.fixtures.is_empty() {
        config.compare.runs.push(config.run_dir());
    }
    for command in sequence {
        let outcome = run_pipeline(&config, command)?;
        println!("{}", outcome.summary);
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ctscan: {e}");
            ExitCode::from(e.family().exit_code() as u8)
        }
    }
}
