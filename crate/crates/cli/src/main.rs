use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oppsched::experiment::{parse_config_with, run, ExperimentKind, Overrides};

/// Opportunistic two-queue scheduling experiments.
#[derive(Parser)]
#[command(name = "oppsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity region vertices, normal slopes and (k, l).
    Geometry(Common),
    /// Partition labels on a queue-state grid, plus switching curves.
    Partition(Common),
    /// Radial sum-rate audit of each scheduler.
    Audit(Common),
    /// Optimal overflow mode and J_*.
    Jstar(Common),
    /// Simulate each scheduler and optionally measure drift.
    Simulate(Common),
    /// Overflow probabilities and decay-rate fit per scheduler.
    Decay(Common),
    /// Decay for every scheduler on common random numbers.
    Compare(Common),
    /// Run whatever kind the config names.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replications for decay and compare, overriding the config.
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads for replications.
    #[arg(long)]
    workers: Option<usize>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

const VALIDATION_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(VALIDATION_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (kind, common) = match cli.command {
        Command::Geometry(c) => (Some(ExperimentKind::Geometry), c),
        Command::Partition(c) => (Some(ExperimentKind::Partition), c),
        Command::Audit(c) => (Some(ExperimentKind::Audit), c),
        Command::Jstar(c) => (Some(ExperimentKind::JStar), c),
        Command::Simulate(c) => (Some(ExperimentKind::Simulate), c),
        Command::Decay(c) => (Some(ExperimentKind::Decay), c),
        Command::Compare(c) => (Some(ExperimentKind::Compare), c),
        Command::Run(c) => (None, c),
    };
    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.config.display());
            return ExitCode::from(VALIDATION_ERROR);
        }
    };
    let overrides = Overrides {
        kind,
        seed: common.seed,
        out: common.out,
        replications: common.replications,
        workers: common.workers,
    };
    let config = match parse_config_with(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(VALIDATION_ERROR);
        }
    };
    match run(&config) {
        Ok(manifest) => {
            if !common.quiet {
                println!(
                    "{} run finished in {:.2} s, seed {}",
                    manifest.kind, manifest.wall_clock_seconds, manifest.seed
                );
                for o in &manifest.outputs {
                    println!("  {}", config.output_dir.join(&o.file).display());
                }
                for n in &manifest.notes {
                    println!("note: {n}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}
