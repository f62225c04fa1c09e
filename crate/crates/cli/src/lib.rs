//! Experiment harness on top of `deepbound`: config-driven training with
//! bound traces, checkpoint analysis, depth sweeps, GIC checks and SVG
//! reports.

// `!(x > 0.0)` is the NaN-rejecting form used for argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analyze;
pub mod config;
pub mod error;
pub mod gic;
pub mod report;
pub mod sweep;
pub mod trace;
pub mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "deepbound",
    version,
    about = "Structural-error and risk-bound experiments on small MLPs"
)]
pub struct Cli {
    /// Experiment config file (`key = value` lines)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output_dir`
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-sample parallelism
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write trace.csv, checkpoints/ and summary.json
    Train,
    /// Per-sample bounds for a checkpoint over the configured dataset
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Structural error at initialization across depths and seeds
    DepthSweep {
        /// Comma-separated depths; overrides `sweep.depths`
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<usize>>,
        /// Number of seeds; overrides `sweep.seeds`
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Gradient-independence report at init and optionally at a checkpoint
    Gic {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also run the ball-sampling containment experiment
        #[arg(long)]
        monte_carlo: bool,
    },
    /// SVG charts and summary.md from a run directory
    Report {
        /// Run directory holding trace.csv; defaults to --out
        #[arg(long)]
        run: Option<PathBuf>,
        /// Window for the final-window medians
        #[arg(long, default_value_t = 50)]
        window: usize,
    },
}

pub fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

/// Executes a parsed command line; the message on success describes the
/// written outputs.
pub fn run(cli: Cli) -> CliResult<String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Train => {
            let o = train::run_train(&cfg, &out)?;
            Ok(format!(
                "{} steps, {} diagnostic events, loss {:.6} -> {:.6}; wrote {}",
                o.summary.steps,
                o.summary.diag_events,
                o.summary.initial_loss,
                o.summary.final_loss,
                out.display()
            ))
        }
        Command::Analyze { checkpoint } => {
            let r = analyze::run_analyze(&cfg, &checkpoint, &out)?;
            Ok(format!(
                "{} samples, dataset bound [{}, {}] around {}; wrote {}",
                r.samples.len(),
                r.lower_bound,
                r.upper_bound,
                r.excess_loss,
                out.join("analyze.csv").display()
            ))
        }
        Command::DepthSweep { depths, seeds } => {
            if let Some(d) = depths {
                cfg.sweep.depths = d;
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            let rows = sweep::run_depth_sweep(&cfg, &out)?;
            Ok(format!(
                "{} rows; wrote {}",
                rows.len(),
                out.join("depth_sweep.csv").display()
            ))
        }
        Command::Gic {
            checkpoint,
            monte_carlo,
        } => {
            let g = gic::run_gic(&cfg, checkpoint.as_deref(), monte_carlo, &out)?;
            Ok(format!(
                "init passes: {}; wrote {}",
                g.init.passes,
                out.join("gic.json").display()
            ))
        }
        Command::Report { run, window } => {
            let dir = run.unwrap_or(out);
            let s = report::run_report(&dir, window)?;
            Ok(format!("{} trace rows; wrote charts to {}", s.rows, dir.display()))
        }
    }
}
