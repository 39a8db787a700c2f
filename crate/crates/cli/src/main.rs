//! `camcue`: synthetic scenes, context-view selection, ray-map dumps,
//! gradient checks, the toy pose-head trainer and pose metrics.

mod commands;
mod config;
mod png_depth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "camcue", version, about)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CAMCUE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a procedural scene directory.
    Synth(commands::SynthArgs),
    /// Choose context views for every target frame and write a manifest.
    Select(commands::SelectArgs),
    /// Dump a frame's canonical ray map and camera tokens.
    Plucker(commands::PluckerArgs),
    /// Compare analytic and finite-difference gradients of the pose head.
    Gradcheck(commands::GradcheckArgs),
    /// Train the pose head on a synthetic task.
    TrainDemo(commands::TrainArgs),
    /// Thresholded rotation/translation accuracy of predicted poses.
    EvalPose(commands::EvalArgs),
}

/// Exit status 1: a check ran and failed.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => commands::synth(a, cfg),
        Command::Select(a) => commands::select(a, cfg),
        Command::Plucker(a) => commands::plucker(a, cfg),
        Command::Gradcheck(a) => commands::gradcheck(a, cfg),
        Command::TrainDemo(a) => commands::train_demo(a, cfg),
        Command::EvalPose(a) => commands::eval_pose(a, cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("check failed: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
