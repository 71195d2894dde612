//! `noisynn`: reproducible studies, sweeps and simulations for weight
//! denoising in noisy neural networks.
//!
//! Every subcommand reads an optional flat `key=value` config file; flags
//! override the file. Outputs are CSV written atomically, and a one-line
//! `key=value` summary goes to stdout. Output bytes depend only on the
//! flags, the config file and the seed (`RAYON_NUM_THREADS` changes speed,
//! not results).

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiments;
mod output;
mod studies;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "noisynn", version, about = "Bayesian denoisers for noisy neural-network weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Clone, Default)]
pub struct Common {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override, applied after the file and before flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Quadratic network: closed-form vs Monte Carlo error surface and optimum.
    QuadStudy(studies::QuadStudyArgs),
    /// Tanh network: approximate vs Monte Carlo error surface and optimum.
    TanhStudy(studies::TanhStudyArgs),
    /// Tanh network: ML and optimal errors across input ranges.
    TanhSweep(studies::TanhSweepArgs),
    /// Denoise a weight file with a fixed strategy.
    Denoise(experiments::DenoiseArgs),
    /// Train the blobs MLP and save it as a weight file.
    Train(experiments::TrainArgs),
    /// Noisy-inference accuracy sweep over WNR and strategies.
    InferSweep(experiments::InferSweepArgs),
    /// Federated learning over a noisy analog uplink.
    Feel(experiments::FeelArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::QuadStudy(a) => studies::quad_study(a),
        Command::TanhStudy(a) => studies::tanh_study(a),
        Command::TanhSweep(a) => studies::tanh_sweep(a),
        Command::Denoise(a) => experiments::denoise(a),
        Command::Train(a) => experiments::train(a),
        Command::InferSweep(a) => experiments::infer_sweep(a),
        Command::Feel(a) => experiments::feel(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
