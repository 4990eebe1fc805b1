//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use sampled_sae_core::synth::SynthConfig;
use sampled_sae_core::{GateConfig, ScoringRule, TrainConfig};
use serde::{Deserialize, Serialize};

/// Candidate-pool multipliers swept by default, before clamping to `m/k`.
pub const DEFAULT_ELLS: [f64; 12] = [
    1.0, 3.0, 4.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 100.0,
];

/// Grid iterated by `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub ells: Vec<f64>,
    pub rules: Vec<ScoringRule>,
    pub seeds: Vec<u64>,
}

/// Everything one experiment needs, as stored in a JSON config file.
///
/// Missing top-level sections fall back to the desk profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: SynthConfig,
    pub gate: GateConfig,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
    /// Root of every output the commands write.
    pub out_dir: PathBuf,
    /// Dataset file; defaults to `<out_dir>/data.ssyn`.
    pub dataset: Option<PathBuf>,
    /// Rows per evaluation chunk.
    pub eval_chunk: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

/// The default ell list clamped to `limit`, deduplicated and sorted.
pub fn clamped_ells(limit: f64) -> Vec<f64> {
    let mut ells: Vec<f64> = DEFAULT_ELLS.iter().map(|&e| e.min(limit)).collect();
    ells.sort_by(f64::total_cmp);
    ells.dedup();
    ells
}

impl ExperimentConfig {
    /// d = 64, m = 256, k = 8 on 20,000 samples.
    pub fn desk() -> Self {
        let gate = GateConfig::new(64, 256, 8, 32.0, ScoringRule::L2Norm);
        ExperimentConfig {
            data: SynthConfig::desk(),
            sweep: SweepGrid {
                ells: clamped_ells(gate.batch_topk_ell()),
                rules: ScoringRule::ALL.to_vec(),
                seeds: vec![0, 1, 2],
            },
            gate,
            train: TrainConfig {
                steps: 5000,
                ..TrainConfig::default()
            },
            out_dir: PathBuf::from("runs/desk"),
            dataset: None,
            eval_chunk: 4096,
        }
    }

    /// d = 256, k = 1024 ground truth with a 2048-feature SAE.
    pub fn full() -> Self {
        let gate = GateConfig::new(256, 2048, 32, 64.0, ScoringRule::L2Norm);
        ExperimentConfig {
            data: SynthConfig::full(),
            sweep: SweepGrid {
                ells: clamped_ells(gate.batch_topk_ell()),
                rules: ScoringRule::ALL.to_vec(),
                seeds: vec![0, 1, 2],
            },
            gate,
            train: TrainConfig::default(),
            out_dir: PathBuf::from("runs/full"),
            dataset: None,
            eval_chunk: 4096,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.out_dir.join("data.ssyn"))
    }

    /// Directory holding the checkpoint and metrics of one training cell.
    pub fn cell_dir(&self, rule: ScoringRule, ell: f64, seed: u64) -> PathBuf {
        self.out_dir.join(cell_name(rule, ell, seed))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.data.validate()?;
        self.gate.validate()?;
        self.train.validate()?;
        if self.gate.d != self.data.d {
            bail!(
                "gate.d = {} does not match data.d = {}",
                self.gate.d,
                self.data.d
            );
        }
        if self.sweep.ells.iter().any(|&e| !(e >= 1.0)) {
            bail!("sweep.ells must all be >= 1");
        }
        if self.sweep.seeds.is_empty() || self.sweep.rules.is_empty() || self.sweep.ells.is_empty()
        {
            bail!("sweep grid must have at least one ell, rule and seed");
        }
        if self.eval_chunk == 0 {
            bail!("eval_chunk must be positive");
        }
        Ok(())
    }
}

pub fn cell_name(rule: ScoringRule, ell: f64, seed: u64) -> String {
    format!("{rule}_ell{ell}_seed{seed}")
}
