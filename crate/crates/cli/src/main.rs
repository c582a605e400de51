//! `rpcgc`: encode, decode and evaluate labeled point clouds with the layered
//! ROI codec.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 corrupt input data,
//! 4 incompatible inputs.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "rpcgc", version, about = "Layered ROI point cloud geometry codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a PLY cloud into a container.
    Encode(commands::EncodeArgs),
    /// Decode a container into a PLY reconstruction.
    Decode(commands::DecodeArgs),
    /// Compare a reconstruction against its reference.
    Eval(commands::EvalArgs),
    /// Evaluate a grid of codec configurations.
    Sweep(commands::SweepArgs),
    /// Bjøntegaard deltas between two curve files.
    Bd(commands::BdArgs),
    /// Export the ROI mask of a labeled cloud as CSV.
    Mask(commands::MaskArgs),
    /// Write the synthetic labeled room scene as PLY.
    Synth(commands::SynthArgs),
}

/// Where a command writes its text output.
pub(crate) fn output_path(path: &Option<PathBuf>) -> Option<&PathBuf> {
    path.as_ref().filter(|p| p.as_os_str() != "-")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(a) => commands::encode(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Bd(a) => commands::bd(&a),
        Command::Mask(a) => commands::mask(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.exit as u8)
        }
    }
}
