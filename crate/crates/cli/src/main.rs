use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sparse_rda::harness::{self, ExperimentConfig, RunOptions, CONFIG_FILE};
use sparse_rda::Error;

/// Sparse training with regularized dual averaging.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on MNIST: the configured optimizer, then adaptive sparse retraining.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Measure how fast the averaged iterate closes the gap on a convex problem.
    Converge(Common),
    /// Run several optimizers on identical data and seeds.
    Compare(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config.json saved next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> sparse_rda::Result<ExperimentConfig> {
        let mut cfg = read_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        Ok(cfg)
    }
}

/// A config file that cannot be read is a configuration error, not an I/O
/// failure of the run.
fn read_config(path: &Path) -> sparse_rda::Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
        e => e,
    })
}

fn write_json(dir: Option<&Path>, name: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(value)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let cfg = common.load()?;
            let report = harness::run_experiment_with(&cfg, &RunOptions { resume, stop_after: None })?;
            for r in &report.records {
                println!("{}", serde_json::to_string(r)?);
            }
        }
        Command::Converge(common) => {
            let cfg = common.load()?;
            let report = harness::run_convergence_study(&cfg)?;
            write_json(cfg.out_dir.as_deref(), "convergence.json", &report)?;
            for (t, gap) in &report.run.gaps {
                println!("{t}\t{gap:.6e}");
            }
            println!(
                "alpha {:.4}  slope {:.4} over t in [{}, {}]  final sparsity {:.3}",
                report.run.alpha, report.slope, report.window[0], report.window[1], report.run.sparsity
            );
        }
        Command::Compare(common) => {
            let cfg = common.load()?;
            let rows = harness::compare_optimizers(&cfg)?;
            write_json(cfg.out_dir.as_deref(), "compare.json", &rows)?;
            print!("{}", harness::comparison_table(&rows));
        }
        Command::Eval { checkpoint, config } => {
            let config = config.unwrap_or_else(|| checkpoint.with_file_name(CONFIG_FILE));
            let cfg = read_config(&config)?;
            let rec = harness::evaluate_checkpoint(&cfg, &checkpoint)?;
            println!("{}", serde_json::to_string(&rec)?);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Json(_) | Error::ConfigHashMismatch { .. }) => 2,
        Some(Error::NonFinite { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    sparse_rda::alloc::keep_freed_buffers();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
