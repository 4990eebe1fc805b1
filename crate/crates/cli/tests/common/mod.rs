#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sampled_sae_cli::ExperimentConfig;
use sampled_sae_core::ScoringRule;

/// A config small enough to train in well under a second.
pub fn tiny_config(out_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.data.d = 8;
    cfg.data.k = 24;
    cfg.data.n = 600;
    cfg.data.dictionary_max_iter = 20;
    cfg.gate.d = 8;
    cfg.gate.m = 16;
    cfg.gate.k = 2;
    cfg.gate.ell = 8.0;
    cfg.train.steps = 30;
    cfg.train.batch_size = 32;
    cfg.train.warmup_steps = 5;
    cfg.train.threshold_start = 10;
    cfg.train.log_every = 5;
    cfg.train.checkpoint_every = 10;
    cfg.sweep.ells = vec![2.0, 8.0];
    cfg.sweep.rules = vec![ScoringRule::L2Norm];
    cfg.sweep.seeds = vec![0, 1];
    cfg.out_dir = out_dir.to_path_buf();
    cfg.eval_chunk = 128;
    cfg
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_path_buf()
}

/// Runs the CLI in-process with string arguments.
pub fn cli(args: &[&str]) -> anyhow::Result<()> {
    let mut full = vec!["sampled-sae"];
    full.extend_from_slice(args);
    sampled_sae_cli::run(full)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
