//! Training loop for Sampled-SAEs.
//!
//! Each step draws a batch, runs [`forward_train`], computes straight-through
//! gradients with [`backward`], applies [`adam_step`], then updates the
//! inference threshold and the dead-feature tracker. All randomness comes
//! from three ChaCha streams derived from the run seed (initialization,
//! batch sampling, uniform scores), so a run is a pure function of its seed
//! and data, and its full state can be checkpointed and resumed.

mod backward;
mod init;
mod optim;

use std::io::Write;

use ndarray::{Array2, ArrayBase, ArrayView2, Axis, Data, Ix2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backward::{backward, SaeGrads};
pub use init::{geometric_median, init_params, GEOMEDIAN_MAX_ITER, GEOMEDIAN_TOL};
pub use optim::{
    adam_step, min_selected, project_decoder_grads, update_dead_tracking, update_threshold,
    warmup_lr, OptState, StepStats,
};

use crate::eval::fvu;
use crate::sae::{forward_train, ForwardTrace, GateConfig, SaeParams};
use crate::{Error, Result, Scalar};

/// Optimizer, schedule and bookkeeping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm bound; `0` disables clipping.
    pub grad_clip: f64,
    pub warmup_steps: u64,
    /// First step at which the threshold EMA is updated.
    pub threshold_start: u64,
    pub threshold_beta: f64,
    /// A feature silent for more than this many steps counts as dead.
    pub dead_window: u64,
    pub seed: u64,
    /// Metrics are logged every this many steps (and at the last step).
    pub log_every: u64,
    /// Checkpoint cadence used by the CLI; `0` disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch_size: 4096,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            warmup_steps: 1000,
            threshold_start: 1000,
            threshold_beta: 0.999,
            dead_window: 1000,
            seed: 0,
            log_every: 50,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.threshold_beta) {
            return bad("threshold_beta must lie in [0, 1)");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        Ok(())
    }
}

/// Supplies training batches of shape `batch_size × d`.
///
/// Sources are stateless; the trainer owns the RNG so batch order is part
/// of the checkpointed state.
pub trait BatchSource<T> {
    fn dim(&self) -> usize;
    fn sample(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Array2<T>>;
}

/// Rows of an in-memory matrix, sampled uniformly with replacement.
impl<T: Scalar, S: Data<Elem = T>> BatchSource<T> for ArrayBase<S, Ix2> {
    fn dim(&self) -> usize {
        self.ncols()
    }

    fn sample(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Array2<T>> {
        let n = self.nrows();
        if n == 0 {
            return Err(Error::Empty("training data has no rows"));
        }
        let rows: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
        Ok(self.select(Axis(0), &rows))
    }
}

/// One row of the training metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss_recon: f64,
    pub loss_aux: f64,
    /// FVU of the training batch.
    pub fvu: f64,
    pub l0_mean: f64,
    /// Number of features treated as dead in this step.
    pub dead: usize,
    pub theta: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "step,loss_recon,loss_aux,fvu,l0_mean,dead,theta";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.loss_recon,
            self.loss_aux,
            self.fvu,
            self.l0_mean,
            self.dead,
            self.theta
        )
    }

    pub fn write_csv_row(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", self.csv_row())
    }
}

const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const SCORE_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Complete mutable state of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub gate: GateConfig,
    pub cfg: TrainConfig,
    pub params: SaeParams<T>,
    pub opt: OptState<T>,
    pub data_rng: ChaCha8Rng,
    pub score_rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    /// Initializes parameters from the first batch drawn from `source`.
    pub fn new(gate: GateConfig, cfg: TrainConfig, source: &dyn BatchSource<T>) -> Result<Self> {
        gate.validate()?;
        cfg.validate()?;
        if source.dim() != gate.d {
            return Err(Error::dims("data dimension", gate.d, source.dim()));
        }
        let mut init_rng = stream_rng(cfg.seed, INIT_STREAM);
        let mut data_rng = stream_rng(cfg.seed, DATA_STREAM);
        let first = source.sample(cfg.batch_size, &mut data_rng)?;
        let params = init_params(first.view(), &gate, &mut init_rng)?;
        Ok(Trainer {
            opt: OptState::new(gate.d, gate.m),
            params,
            score_rng: stream_rng(cfg.seed, SCORE_STREAM),
            data_rng,
            gate,
            cfg,
        })
    }

    pub fn step_index(&self) -> u64 {
        self.opt.t
    }

    pub fn is_done(&self) -> bool {
        self.opt.t >= self.cfg.steps
    }

    /// Runs one full optimizer step on a freshly sampled batch.
    pub fn step(&mut self, source: &dyn BatchSource<T>) -> Result<StepReport> {
        let batch = source.sample(self.cfg.batch_size, &mut self.data_rng)?;
        self.step_on(batch.view()).map(|(report, _)| report)
    }

    /// Runs one optimizer step on the given batch and returns its trace.
    pub fn step_on(&mut self, batch: ArrayView2<T>) -> Result<(StepReport, ForwardTrace<T>)> {
        let t = self.opt.t;
        let dead = self.opt.dead_mask(t, self.cfg.dead_window);
        let n_dead = dead.iter().filter(|&&d| d).count();
        let trace = forward_train(batch, &self.params, &self.gate, &dead, &mut self.score_rng)?;
        if !trace.loss_total.is_finite() {
            return Err(Error::Diverged {
                step: t,
                reason: format!(
                    "non-finite loss (recon {}, aux {})",
                    trace.loss_recon, trace.loss_aux
                ),
            });
        }
        let grads = backward(&trace, batch, &self.params, &self.gate)?;
        adam_step(&mut self.params, grads, &mut self.opt, &self.cfg)?;
        let (theta, started) = update_threshold(
            self.params.theta,
            self.opt.theta_started,
            trace.codes.view(),
            t,
            &self.cfg,
        );
        self.params.theta = theta;
        self.opt.theta_started = started;
        update_dead_tracking(&mut self.opt, trace.codes.view(), t);
        if !self.params.is_finite() {
            return Err(Error::Diverged {
                step: t,
                reason: "non-finite parameters after update".into(),
            });
        }
        let report = StepReport {
            step: t,
            loss_recon: trace.loss_recon,
            loss_aux: trace.loss_aux,
            fvu: fvu(batch, trace.x_hat.view()).unwrap_or(f64::NAN),
            l0_mean: trace.mean_l0(),
            dead: n_dead,
            theta: theta.to_f64_lossless(),
        };
        Ok((report, trace))
    }

    pub fn should_log(&self, step: u64) -> bool {
        step % self.cfg.log_every == 0 || step + 1 == self.cfg.steps
    }

    /// Trains until `cfg.steps`, calling `on_log` for every logged step.
    pub fn run(
        &mut self,
        source: &dyn BatchSource<T>,
        mut on_log: impl FnMut(&Self, &StepReport) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            let report = self.step(source)?;
            if self.should_log(report.step) {
                on_log(self, &report)?;
            }
        }
        Ok(())
    }
}

/// Trains a fresh model and returns its parameters with the metrics log.
pub fn train<T: Scalar>(
    source: &dyn BatchSource<T>,
    gate: &GateConfig,
    cfg: &TrainConfig,
) -> Result<(SaeParams<T>, Vec<StepReport>)> {
    let mut trainer = Trainer::new(gate.clone(), cfg.clone(), source)?;
    let mut log = Vec::new();
    trainer.run(source, |_, r| {
        log.push(*r);
        Ok(())
    })?;
    Ok((trainer.params, log))
}
