//! Command implementations, callable without going through argument parsing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ndarray::Array2;
use rayon::prelude::*;
use sampled_sae_core::checkpoint;
use sampled_sae_core::eval::{self, BestMatch, EvalOptions};
use sampled_sae_core::io::write_atomic;
use sampled_sae_core::synth::{self, SynthStats};
use sampled_sae_core::trainer::StepReport;
use sampled_sae_core::{EvalReport, ScoringRule, SynthDataset, Trainer};

use crate::config::{cell_name, ExperimentConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.ssae";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const SWEEP_HEADER: &str =
    "rule,ell,seed,fvu,density_frac,recovery_lf_ha,recovery_hf_ha,recovery_lf_la,recovery_hf_la,freq_corr,mmcs_vs_seed0";

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
        .with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Generates the dataset and writes it with its stats sidecar.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<SynthStats> {
    let data = synth::generate(&cfg.data)?;
    let stats = synth::dataset_stats(&data)?;
    synth::write_dataset(out, &data).with_context(|| format!("writing {}", out.display()))?;
    synth::write_stats(&synth::stats_path(out), &stats)?;
    Ok(stats)
}

pub fn load_dataset(path: &Path) -> anyhow::Result<SynthDataset> {
    if !path.exists() {
        bail!(
            "dataset {} does not exist (run `gen-data` first)",
            path.display()
        );
    }
    synth::read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn metrics_text(rows: &[StepReport]) -> String {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(StepReport::CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    text
}

fn read_metrics(path: &Path, before: u64) -> anyhow::Result<Vec<StepReport>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            bail!("malformed metrics row `{line}`");
        }
        let row = StepReport {
            step: f[0].parse()?,
            loss_recon: f[1].parse()?,
            loss_aux: f[2].parse()?,
            fvu: f[3].parse()?,
            l0_mean: f[4].parse()?,
            dead: f[5].parse()?,
            theta: f[6].parse()?,
        };
        if row.step < before {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// One (rule, ell, seed) training job.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub rule: ScoringRule,
    pub ell: f64,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        cell_name(self.rule, self.ell, self.seed)
    }
}

/// Trains one cell into `dir`, writing periodic checkpoints and the metrics
/// CSV. With `resume`, continues from `dir/checkpoint.ssae` when present.
pub fn train_cell(
    cfg: &ExperimentConfig,
    data: &SynthDataset,
    cell: Cell,
    dir: &Path,
    resume: bool,
) -> anyhow::Result<Trainer<f32>> {
    let gate = cfg.gate.clone().with_rule(cell.rule).with_ell(cell.ell);
    let mut train = cfg.train.clone();
    train.seed = cell.seed;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let metrics = dir.join(METRICS_FILE);

    let (mut trainer, mut rows) = if resume && ckpt.exists() {
        let trainer = checkpoint::load_matching(&ckpt, &gate)
            .with_context(|| format!("resuming from {}", ckpt.display()))?;
        if trainer.cfg != train {
            bail!(
                "checkpoint {} was written with a different training config",
                ckpt.display()
            );
        }
        if trainer.is_done() {
            return Ok(trainer);
        }
        let rows = if metrics.exists() {
            read_metrics(&metrics, trainer.step_index())?
        } else {
            Vec::new()
        };
        (trainer, rows)
    } else {
        (Trainer::new(gate, train, &data.x)?, Vec::new())
    };

    let mut cfg_snapshot = cfg.clone();
    cfg_snapshot.gate = trainer.gate.clone();
    cfg_snapshot.train = trainer.cfg.clone();
    write_json(&dir.join("config.json"), &cfg_snapshot)?;

    let every = trainer.cfg.checkpoint_every;
    while !trainer.is_done() {
        let report = trainer.step(&data.x)?;
        if trainer.should_log(report.step) {
            rows.push(report);
        }
        let done = trainer.step_index();
        if every > 0 && done % every == 0 && !trainer.is_done() {
            checkpoint::save(&ckpt, &trainer)?;
            write_text(&metrics, &metrics_text(&rows))?;
        }
    }
    checkpoint::save(&ckpt, &trainer)?;
    write_text(&metrics, &metrics_text(&rows))?;
    Ok(trainer)
}

pub fn evaluate(
    trainer: &Trainer<f32>,
    data: &SynthDataset,
    chunk: usize,
) -> anyhow::Result<EvalReport> {
    let mut opts = EvalOptions::for_params(&trainer.params);
    opts.chunk_size = chunk;
    Ok(eval::evaluate(&trainer.params, &trainer.gate, data, &opts)?)
}

pub fn eval_checkpoint(
    ckpt: &Path,
    data: &SynthDataset,
    chunk: usize,
    out: &Path,
) -> anyhow::Result<EvalReport> {
    let trainer = checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let report = evaluate(&trainer, data, chunk)?;
    write_json(out, &report)?;
    Ok(report)
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    pub report: EvalReport,
    pub mmcs_vs_seed0: f64,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        let [a, b, c, d] = r.per_bucket_recovery;
        let corr = r.freq_corr.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{a},{b},{c},{d},{corr},{}",
            self.cell.rule,
            self.cell.ell,
            self.cell.seed,
            r.fvu,
            r.density_frac,
            self.mmcs_vs_seed0
        )
    }
}

/// Outcome of a sweep: successful rows plus the cells that failed.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(Cell, String)>,
}

/// Evaluation and decoder of a finished cell.
type CellResult = (EvalReport, Array2<f32>);

pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut rules = cfg.sweep.rules.clone();
    rules.sort();
    rules.dedup();
    let mut ells = cfg.sweep.ells.clone();
    ells.sort_by(f64::total_cmp);
    ells.dedup();
    let mut seeds = cfg.sweep.seeds.clone();
    seeds.sort();
    seeds.dedup();
    let mut cells = Vec::new();
    for &rule in &rules {
        for &ell in &ells {
            for &seed in &seeds {
                cells.push(Cell { rule, ell, seed });
            }
        }
    }
    cells
}

/// Trains and evaluates every grid cell on up to `jobs` threads, then writes
/// `sweep.csv` (sorted by rule, ell, seed) and `failures.csv` under `out_dir`.
///
/// The reference decoder for `mmcs_vs_seed0` is the smallest seed of the
/// same (rule, ell).
pub fn sweep(
    cfg: &ExperimentConfig,
    data: &SynthDataset,
    jobs: usize,
) -> anyhow::Result<SweepOutcome> {
    let cells = sweep_cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let results: Vec<(Cell, anyhow::Result<CellResult>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                let run = || -> anyhow::Result<CellResult> {
                    let dir = cfg.cell_dir(cell.rule, cell.ell, cell.seed);
                    let trainer = train_cell(cfg, data, cell, &dir, true)?;
                    let report = evaluate(&trainer, data, cfg.eval_chunk)?;
                    write_json(&dir.join(EVAL_FILE), &report)?;
                    Ok((report, trainer.params.w_dec))
                };
                (cell, run())
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut done: Vec<(Cell, EvalReport, Array2<f32>)> = Vec::new();
    for (cell, res) in results {
        match res {
            Ok((report, w)) => done.push((cell, report, w)),
            Err(e) => failures.push((cell, format!("{e:#}"))),
        }
    }
    for (cell, report, w) in &done {
        let reference = done
            .iter()
            .find(|(c, _, _)| c.rule == cell.rule && c.ell == cell.ell)
            .expect("cell is in its own group");
        let mmcs_vs_seed0 = eval::mmcs(w.view(), reference.2.view())?;
        rows.push(SweepRow {
            cell: *cell,
            report: report.clone(),
            mmcs_vs_seed0,
        });
    }

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    write_text(&cfg.out_dir.join("sweep.csv"), &csv)?;
    let mut fail_csv = String::from("rule,ell,seed,error\n");
    for (c, e) in &failures {
        let msg = e.replace(['\n', ','], " ");
        writeln!(fail_csv, "{},{},{},{msg}", c.rule, c.ell, c.seed).expect("string write");
    }
    write_text(&cfg.out_dir.join("failures.csv"), &fail_csv)?;
    Ok(SweepOutcome { rows, failures })
}

/// MMCS of `a` against `b` and the per-feature best-match report.
pub fn compare(a: &Path, b: &Path, out: &Path) -> anyhow::Result<(f64, Vec<BestMatch>)> {
    let ta = checkpoint::load(a).with_context(|| format!("loading {}", a.display()))?;
    let tb = checkpoint::load(b).with_context(|| format!("loading {}", b.display()))?;
    if ta.gate.d != tb.gate.d {
        bail!(
            "checkpoints have different input dimensions ({} vs {})",
            ta.gate.d,
            tb.gate.d
        );
    }
    let wa = ta.params.w_dec.view();
    let wb = tb.params.w_dec.view();
    let mmcs = eval::mmcs(wa, wb)?;
    let report = eval::best_match_report(wa, wb)?;
    let mut csv = String::from("feature,best_match,cosine\n");
    for r in &report {
        writeln!(csv, "{},{},{}", r.feature, r.best_match, r.cosine).expect("string write");
    }
    write_text(out, &csv)?;
    Ok((mmcs, report))
}

/// Default checkpoint location of a cell.
pub fn cell_checkpoint(cfg: &ExperimentConfig, cell: Cell) -> PathBuf {
    cfg.cell_dir(cell.rule, cell.ell, cell.seed)
        .join(CHECKPOINT_FILE)
}
