use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hdm_core::config::{parse_config, run_fit, run_predict, run_simulate, Failure, Mode, RunOptions, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "hdm", version, about = "Behavioral game models and fog-market negotiation experiments")]
struct Cli {
    /// Output directory (defaults to the config's output_dir, then ./out).
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,

    /// Worker threads for independent runs (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Print the resolved config as JSON and exit without running.
    #[arg(long, global = true)]
    dump_resolved_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the negotiation over every (noise, averaging, seed) cell.
    Simulate { config: PathBuf },
    /// Fit a behavioral model to a JSON Lines dataset.
    Fit { config: PathBuf },
    /// Print each player's predicted mixed strategy.
    Predict { config: PathBuf },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (mode, path) = match cli.command {
        Command::Simulate { config } => (Mode::Simulate, config),
        Command::Fit { config } => (Mode::Fit, config),
        Command::Predict { config } => (Mode::Predict, config),
    };
    // an unreadable config is bad input too
    let spec = parse_config(&path, Some(mode)).map_err(Failure::Validation)?;
    if cli.dump_resolved_config {
        println!("{}", spec.to_json().map_err(Failure::Runtime)?);
        return Ok(());
    }
    let opts = RunOptions::resolve(cli.out, &spec, cli.workers);
    match mode {
        Mode::Simulate => {
            let outcome = run_simulate(&spec, &opts)?;
            eprintln!(
                "wrote {} traces, summary.json and manifest.json to {}",
                outcome.manifest.runs.len(),
                opts.out_dir.display()
            );
        }
        Mode::Fit => {
            let fit = run_fit(&spec, &opts)?;
            println!("{}", serde_json::to_string_pretty(&fit).map_err(|e| Failure::Runtime(e.into()))?);
        }
        Mode::Predict => println!("{}", run_predict(&spec)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
