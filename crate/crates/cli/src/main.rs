use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nde_cli::report::{summarize, write_rows};
use nde_cli::sweep::{sweep_members, sweep_noise};
use nde_cli::{run, Overrides, RunConfig};
use noisy_ensemble::perturbation::NoiseDistribution;
use noisy_ensemble::pipeline::Strategy;

#[derive(Parser)]
#[command(name = "nde", version, about = "Train and compare noisy deep ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one strategy and write manifest, reports and checkpoints.
    Run(RunArgs),
    /// Noisy ensembles over an (alpha, beta) grid sharing one parent.
    SweepNoise {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated mask rates.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        /// Comma-separated noise scales.
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
    },
    /// Mean and std of ensemble accuracy per member count.
    SweepMembers {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated member counts.
        #[arg(long = "ms", value_delimiter = ',', required = true)]
        ms: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Collect report rows from existing run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dist: Option<NoiseDistribution>,
    #[arg(long)]
    parent_epochs: Option<usize>,
    #[arg(long)]
    child_epochs: Option<usize>,
    #[arg(long)]
    subset: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            strategy: self.strategy,
            members: self.members,
            alpha: self.alpha,
            beta: self.beta,
            dist: self.dist,
            parent_epochs: self.parent_epochs,
            child_epochs: self.child_epochs,
            subset: self.subset,
        }
    }

    /// Sweeps set noise values per cell, so a missing noise section is fine here.
    fn sweep_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides())?;
            let outcome = run::run(&cfg)?;
            let m = &outcome.report.metrics;
            println!(
                "{} M={} accuracy={:.4} ece={:.4} nll={:.4} disagreement={:.4} kl={:.4} budget_ratio={:.3} -> {}",
                outcome.report.strategy,
                outcome.report.members,
                m.accuracy,
                m.ece,
                m.nll,
                m.mean_disagreement,
                m.mean_kl,
                m.budget_ratio,
                outcome.dir.display()
            );
        }
        Command::SweepNoise { run, alphas, betas } => {
            let cfg = run.sweep_config()?;
            for row in sweep_noise(&cfg, &alphas, &betas)? {
                println!(
                    "alpha={} beta={} accuracy={:.4} kl={:.4}",
                    row.alpha.unwrap_or_default(),
                    row.beta.unwrap_or_default(),
                    row.accuracy,
                    row.mean_kl
                );
            }
            println!("grid -> {}", cfg.out.join("sweep_noise.csv").display());
        }
        Command::SweepMembers { run, ms, repeats } => {
            let cfg = run.sweep_config()?;
            let (rows, _) = sweep_members(&cfg, &ms, repeats).context("sweep-members")?;
            for row in &rows {
                println!("M={} accuracy={:.4} ± {:.4}", row.m, row.mean_accuracy, row.std_accuracy);
            }
            println!("summary -> {}", cfg.out.join("sweep_members.csv").display());
        }
        Command::Report { dirs, csv } => {
            let rows = summarize(&dirs)?;
            match csv {
                Some(path) => write_rows(&path, &rows)?,
                None => {
                    let mut w = ::csv::Writer::from_writer(std::io::stdout());
                    for r in &rows {
                        w.serialize(r)?;
                    }
                    w.flush()?;
                }
            }
        }
    }
    Ok(())
}
