use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qitekit::cli::{default_config_toml, exit_code, run, Command, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "qitekit", version, about = "Finite-temperature spin-chain observables with QITE")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample every expectation with this many shots.
    #[arg(long, global = true)]
    shots: Option<u64>,
    /// Enable the synthetic gate and readout noise model.
    #[arg(long, global = true)]
    noise: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Terms, symmetries, pool sizes and spectrum of the model.
    ModelInfo,
    /// One imaginary-time trajectory from the configured initial state.
    Qite,
    /// Thermal averages of the configured observables over the β grid.
    Thermal,
    /// Dynamical correlation function from the ancilla circuit.
    Corr,
    /// Correlation function and its discrete spectrum.
    Spectrum,
    /// Fit a brick circuit to a dense unitary.
    Recompile,
    /// Three-CNOT decomposition of a two-qubit unitary.
    Kak,
    /// Readout calibration matrix under the noise model.
    Calibrate,
    /// Print the default configuration.
    DefaultConfig,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::ModelInfo => Command::ModelInfo,
        Cmd::Qite => Command::Qite,
        Cmd::Thermal => Command::Thermal,
        Cmd::Corr => Command::Corr,
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Recompile => Command::Recompile,
        Cmd::Kak => Command::Kak,
        Cmd::Calibrate => Command::Calibrate,
        Cmd::DefaultConfig => {
            print!("{}", default_config_toml());
            return ExitCode::SUCCESS;
        }
    };
    let mut cfg = match &args.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(exit_code(&e) as u8);
            }
        },
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides { seed: args.seed, shots: args.shots, noise: args.noise, out: args.out });
    match run(command, &cfg) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            if let Some(msg) = report.aborted {
                eprintln!("aborted: {msg}");
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
