//! Command-line front end for the event-to-HDR toolkit.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! stage failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evhdr::pipeline::{self, Command as Stage, PipelineError};

#[derive(Parser)]
#[command(
    name = "evhdr",
    version,
    about = "Event-to-HDR video toolkit: simulation, voxelization, fusion, kernels, metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,

    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed for demo weight initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Compute metrics on linear values instead of tone-mapped ones.
    #[arg(long, global = true)]
    linear: bool,

    /// Dotted config override, e.g. --set voxel.bins=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Simulate an event stream from a frame sequence.
    Simulate,
    /// Bin an event stream into per-interval voxel grids.
    Voxelize,
    /// Merge a bright/dark LDR pair into a linear HDR frame.
    FuseHdr,
    /// Tone map a linear HDR frame to 8 bits.
    Tonemap,
    /// Run the reconstruction kernels over voxel grids.
    KernelsForward,
    /// Score reconstructions against ground truth.
    Metrics,
    /// Full graph: simulate, voxelize, kernels, metrics.
    Pipeline,
}

impl CliCommand {
    fn stage(&self) -> Stage {
        match self {
            CliCommand::Simulate => Stage::Simulate,
            CliCommand::Voxelize => Stage::Voxelize,
            CliCommand::FuseHdr => Stage::FuseHdr,
            CliCommand::Tonemap => Stage::Tonemap,
            CliCommand::KernelsForward => Stage::KernelsForward,
            CliCommand::Metrics => Stage::Metrics,
            CliCommand::Pipeline => Stage::Pipeline,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PipelineError::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = pipeline::load_config(cli.config.as_deref(), &cli.set)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.linear {
        cfg.linear = true;
    }
    let summary = pipeline::run(cli.command.stage(), &cfg)?;
    println!(
        "{}: {} artifacts, manifest {}",
        summary.command,
        summary.artifacts.len(),
        summary.manifest_path.display()
    );
    Ok(())
}
