//! Sampled sparse autoencoders.
//!
//! A Sampled-SAE scores every dictionary feature over a batch, admits the
//! `⌊ℓ·K⌋` best-scoring features to a candidate pool, and applies BatchTopK
//! inside that pool. Setting `ℓ = m/K` admits every feature and recovers
//! plain BatchTopK.
//!
//! The crate is organised as:
//!
//! - [`sae`]: the forward pass (encoder, scoring rules, pool selection,
//!   BatchTopK, thresholding, decoder, loss).
//! - [`trainer`]: straight-through backward pass, Adam with warmup and
//!   clipping, unit-norm decoder maintenance, dead-feature tracking and the
//!   inference threshold EMA.
//! - [`synth`]: ground-truth sparse-superposition data with a
//!   low-coherence dictionary and frequency/magnitude buckets.
//! - [`eval`]: FVU, feature density, Hungarian ground-truth recovery,
//!   frequency fidelity, MMCS and cross-model best matches.
//! - [`checkpoint`]: the `SSAE` checkpoint file format.

pub mod checkpoint;
mod error;
pub mod eval;
pub mod io;
pub mod sae;
mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use eval::{EvalReport, MatchResult};
pub use sae::{ForwardTrace, GateConfig, SaeParams, ScoringRule};
pub use synth::{Bucket, BucketSpec, SynthDataset, SynthGroundTruth};
pub use trainer::{OptState, TrainConfig, Trainer};
