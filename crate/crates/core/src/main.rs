use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sparsebvar::cli::{apply_overrides, load_config, run, Command, Overrides};
use sparsebvar::data::DATA_DIR_ENV;

/// Minnesota BVARs with sparsified posteriors: simulation study, estimation,
/// recursive forecasting and evaluation.
///
/// Settings come from a JSON config (`--config`); flags override it.
#[derive(Parser)]
#[command(name = "sparsebvar", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides sampling.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Write into an existing output directory.
    #[arg(long, global = true)]
    force: bool,

    /// Output directory (overrides paths.output).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Directory that relative data paths resolve against.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte Carlo study of estimation accuracy on simulated VARs.
    Study,
    /// Estimate the posterior on the full sample and save its moments.
    Fit,
    /// Recursive out-of-sample forecasts for every configured model.
    Forecast,
    /// Forecast, then score every model against the benchmark.
    Evaluate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Study => Command::Study,
        Cmd::Fit => Command::Fit,
        Cmd::Forecast => Command::Forecast,
        Cmd::Evaluate => Command::Evaluate,
    };
    let ov = Overrides { seed: cli.seed, output: cli.output, data_dir: cli.data_dir, workers: cli.workers, force: cli.force };
    let result = load_config(cli.config.as_deref()).and_then(|cfg| apply_overrides(cfg, &ov)).and_then(|cfg| run(command, &cfg, &ov));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sparsebvar {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
