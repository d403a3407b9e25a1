use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bmlp::commands;
use bmlp::config::{Overrides, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Behavior-aware MLP sequential recommender.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `model.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, clean and split a raw log.
    Preprocess(Common),
    /// Train and save the best checkpoint.
    Train(Common),
    /// Score a checkpoint on the test and intent splits.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every ablation and input variant.
    Ablate(Common),
    /// Grid search by validation HR@10.
    Sweep(Common),
    /// Step time against sequence length.
    Bench(Common),
}

fn load(c: &Common, checkpoint: Option<PathBuf>) -> Result<RunConfig> {
    RunConfig::load(
        &c.config,
        &Overrides {
            out: Some(c.out.clone()),
            seed: c.seed,
            threads: c.threads,
            checkpoint,
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => {
            let n = commands::preprocess(&load(&c, None)?)?;
            eprintln!(
                "preprocess: {} users, {} items, {} training instances",
                n.users, n.items, n.training_instances
            );
        }
        Command::Train(c) => {
            let o = commands::train_cmd(&load(&c, None)?)?;
            eprintln!("train: {} epochs, best epoch {}", o.log.len(), o.best_epoch);
        }
        Command::Evaluate { common, checkpoint } => {
            for r in commands::evaluate_cmd(&load(&common, checkpoint)?)? {
                let m: Vec<String> = r.metrics.iter().map(|m| format!("HR@{0}={1:.4} NDCG@{0}={2:.4}", m.k, m.hr, m.ndcg)).collect();
                eprintln!("{} ({} samples): {}", r.group, r.n_samples, m.join(" "));
            }
        }
        Command::Ablate(c) => {
            let rows = commands::ablate_cmd(&load(&c, None)?)?;
            eprintln!("ablate: {} cells", rows.len());
        }
        Command::Sweep(c) => {
            let s = commands::sweep_cmd(&load(&c, None)?)?;
            eprintln!("sweep: {} points, best index {}", s.rows.len(), s.best);
        }
        Command::Bench(c) => {
            let b = commands::bench_cmd(&load(&c, None)?)?;
            eprintln!("bench: model ratios {:?}", b.model.ratio_2x);
        }
    }
    Ok(())
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
