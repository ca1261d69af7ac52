mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "khdm", version, about = "Koopman models of chaotic dynamics from trajectory data")]
pub struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample trajectories of a named system into a dataset file.
    Generate(GenerateArgs),
    /// Hankel DMD on a dataset: errors, spectrum and fitted matrices.
    Hdmd(HdmdArgs),
    /// Train the autoencoder with latent Hankel DMD.
    Train(TrainArgs),
    /// Reconstructions and forecasts from a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Lagged self-information tables for original and latent coordinates.
    Mi(MiArgs),
    /// Largest Lyapunov exponent of a named system.
    Lyapunov(LyapunovArgs),
    /// Random search over batch size, regularization and learning rate.
    Tune(TuneArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    #[arg(long)]
    pub tf: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value = "dataset.khdm")]
    pub out: PathBuf,
    /// Also write a long-form CSV next to the dataset.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct HdmdArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub n_ob_bar: Option<usize>,
    #[arg(long)]
    pub n_st: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset holding the training trajectories followed by the test ones.
    /// Sampled from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub n_ob_bar: Option<usize>,
    #[arg(long)]
    pub f_r: Option<f64>,
    #[arg(long)]
    pub e_max: Option<usize>,
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Write a plotting script for the loss curves.
    #[arg(long)]
    pub plot_script: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate every trajectory instead of those after the training count.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub plot_script: bool,
}

#[derive(Args, Debug)]
pub struct MiArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// original, latent or both.
    #[arg(long, default_value = "both")]
    pub source: String,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Use at most this many trajectories.
    #[arg(long)]
    pub max_traj: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LyapunovArgs {
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub renorm: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub e_tst: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("KHDM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("KHDM_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = init_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code() as u8)
        }
    }
}
