//! `organichar`: sensor-first activity discovery from the command line.

mod commands;
mod services;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use organichar::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "organichar", version, about = "Discover activities from sensor recordings and train recognizers for them")]
struct Cli {
    /// Pipeline configuration (JSON). Falls back to $ORGANIC_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file and $ORGANIC_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize session directories from an activity script or the demo corpus.
    Simulate(commands::SimulateArgs),
    /// Find key moments, describe them and build the label hierarchy.
    Discover(commands::DiscoverArgs),
    /// Train a zone-first model at one granularity and evaluate it leave-one-session-out.
    Train(commands::TrainArgs),
    /// Run a trained model over a session and write activity segments.
    Infer(commands::InferArgs),
    /// Replay sessions in order, annotating incrementally.
    Incremental(commands::IncrementalArgs),
    /// Summarize artifacts written by the other commands.
    Report(commands::ReportArgs),
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref(), &|k| std::env::var(k).ok())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.annotate.parallelism = cfg.annotate.parallelism.min(jobs.max(1));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = config(&cli)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &cfg),
        Command::Discover(a) => commands::discover(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Infer(a) => commands::infer(a, &cfg),
        Command::Incremental(a) => commands::incremental(a, &cfg),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
