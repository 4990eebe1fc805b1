//! Command-line harness for Sampled-SAE experiments.
//!
//! `gen-data` writes a synthetic dataset, `train` fits one (rule, ell, seed)
//! cell, `eval` scores a checkpoint against the ground truth, `sweep` runs
//! the whole grid into `sweep.csv`, and `compare` reports decoder overlap
//! between two checkpoints.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sampled_sae_core::ScoringRule;

use crate::commands::Cell;
pub use crate::config::ExperimentConfig;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SAMPLED_SAE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "sampled-sae",
    version,
    about = "Sampled-SAE experiments on synthetic data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON experiment config; the desk profile when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Candidate pool multiplier.
    #[arg(long)]
    pub ell: Option<f64>,
    /// Scoring rule: l2_norm, squared_l2, entropy or uniform.
    #[arg(long)]
    pub rule: Option<ScoringRule>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path (file or directory depending on the command).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its stats sidecar.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train one cell, writing checkpoints and a metrics CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file (defaults to the config's).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from an existing checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write an EvalReport JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file (defaults to the cell selected by rule/ell/seed).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate the full rule × ell × seed grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Cells trained concurrently.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the decoders of two checkpoints.
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::Compare { common, .. } => common,
        }
    }
}

/// Thread cap from [`THREADS_ENV`], if set.
pub fn thread_cap() -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
            Ok(Some(n.max(1)))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context(THREADS_ENV),
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk(),
    };
    Ok(cfg)
}

/// Resolves the single cell addressed by the overrides.
fn selected_cell(cfg: &ExperimentConfig, common: &Common) -> Cell {
    Cell {
        rule: common.rule.unwrap_or(cfg.gate.rule),
        ell: common.ell.unwrap_or(cfg.gate.ell),
        seed: common.seed.unwrap_or(cfg.train.seed),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let cap = thread_cap()?;
    if let Some(n) = cap {
        // Fails only if the global pool already exists, e.g. in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let common = cli.command.common().clone();
    let mut cfg = load_config(&common)?;

    match cli.command {
        Command::GenData { d, k, n, .. } => {
            if let Some(d) = d {
                cfg.data.d = d;
                cfg.gate.d = d;
            }
            if let Some(k) = k {
                cfg.data.k = k;
            }
            if let Some(n) = n {
                cfg.data.n = n;
            }
            if let Some(seed) = common.seed {
                cfg.data.seed = seed;
            }
            cfg.validate()?;
            let out = common.out.clone().unwrap_or_else(|| cfg.dataset_path());
            let stats = commands::gen_data(&cfg, &out)?;
            println!(
                "wrote {} (d={}, k={}, n={})",
                out.display(),
                stats.d,
                stats.k,
                stats.n
            );
            println!(
                "coherence {:.4} (Welch bound {:.4}), L0 expected {:.3} observed {:.3}",
                stats.coherence, stats.welch_bound, stats.expected_l0, stats.observed_l0
            );
        }
        Command::Train {
            data,
            steps,
            resume,
            ..
        } => {
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            cfg.validate()?;
            let cell = selected_cell(&cfg, &common);
            let dir = common
                .out
                .clone()
                .unwrap_or_else(|| cfg.cell_dir(cell.rule, cell.ell, cell.seed));
            let dataset = commands::load_dataset(&data.unwrap_or_else(|| cfg.dataset_path()))?;
            let trainer = commands::train_cell(&cfg, &dataset, cell, &dir, resume)?;
            println!(
                "trained {} for {} steps into {}",
                cell.name(),
                trainer.step_index(),
                dir.display()
            );
        }
        Command::Eval {
            checkpoint, data, ..
        } => {
            cfg.validate()?;
            let cell = selected_cell(&cfg, &common);
            let ckpt = checkpoint.unwrap_or_else(|| commands::cell_checkpoint(&cfg, cell));
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| ckpt.with_file_name(commands::EVAL_FILE));
            let dataset = commands::load_dataset(&data.unwrap_or_else(|| cfg.dataset_path()))?;
            let report = commands::eval_checkpoint(&ckpt, &dataset, cfg.eval_chunk, &out)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Sweep { jobs, .. } => {
            if let Some(rule) = common.rule {
                cfg.sweep.rules = vec![rule];
            }
            if let Some(ell) = common.ell {
                cfg.sweep.ells = vec![ell];
            }
            if let Some(seed) = common.seed {
                cfg.sweep.seeds = vec![seed];
            }
            if let Some(out) = &common.out {
                cfg.out_dir = out.clone();
            }
            cfg.validate()?;
            let data_path = cfg.dataset_path();
            if !data_path.exists() {
                commands::gen_data(&cfg, &data_path)?;
            }
            let dataset = commands::load_dataset(&data_path)?;
            let mut jobs = jobs.unwrap_or_else(rayon::current_num_threads);
            if let Some(n) = cap {
                jobs = jobs.min(n);
            }
            let outcome = commands::sweep(&cfg, &dataset, jobs)?;
            println!(
                "wrote {} ({} rows, {} failed cells)",
                cfg.out_dir.join("sweep.csv").display(),
                outcome.rows.len(),
                outcome.failures.len()
            );
            for (cell, err) in &outcome.failures {
                eprintln!("cell {} failed: {err}", cell.name());
            }
        }
        Command::Compare { a, b, .. } => {
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("compare.csv"));
            let (mmcs, report) = commands::compare(&a, &b, &out)?;
            println!(
                "mmcs {mmcs:.6} over {} features; wrote {}",
                report.len(),
                out.display()
            );
        }
    }
    Ok(())
}
