//! Forward pass of a Sampled-SAE.
//!
//! Tokens are rows throughout: `X` is `B × d`, preactivations and codes are
//! `B × m`. A training step runs
//! [`encode_preacts`] → [`score_features`] → [`select_pool`] → [`mask_pool`]
//! → [`batch_topk`] → [`decode`] → [`total_loss`], which [`forward_train`]
//! composes into a [`ForwardTrace`]. Inference replaces the batch-level
//! selection by the learned activation threshold ([`apply_threshold`]).

mod config;
mod ops;
mod params;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

pub use config::{GateConfig, ScoringRule};
pub use ops::{
    apply_threshold, aux_topk, batch_topk, decode, encode_preacts, mask_pool, score_features,
    select_pool, total_loss, AuxTrace, LossParts,
};
pub use params::SaeParams;

pub(crate) use ops::center;

use crate::{Error, Result, Scalar};

/// Every intermediate of one training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Post-ReLU preactivations.
    pub z: Array2<T>,
    /// Feature scores.
    pub scores: Array1<f64>,
    /// Candidate pool mask.
    pub pool: Vec<bool>,
    /// Sparse codes; their support is the straight-through mask.
    pub codes: Array2<T>,
    pub x_hat: Array2<T>,
    pub loss_recon: f64,
    pub loss_aux: f64,
    pub loss_total: f64,
    pub aux: Option<AuxTrace<T>>,
    pub(crate) params_fingerprint: u64,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn nnz(&self) -> usize {
        self.codes.iter().filter(|&&v| v != T::zero()).count()
    }

    pub fn mean_l0(&self) -> f64 {
        self.nnz() as f64 / self.codes.nrows().max(1) as f64
    }

    pub fn pool_len(&self) -> usize {
        self.pool.iter().filter(|&&c| c).count()
    }

    /// Whether this trace was produced by `params` in their current state.
    pub fn is_fresh_for(&self, params: &SaeParams<T>) -> bool {
        self.params_fingerprint == params.fingerprint()
    }
}

/// One training forward pass with batch-level candidate selection.
///
/// `rng` is only consumed by the uniform scoring rule.
pub fn forward_train<T: Scalar, R: Rng + ?Sized>(
    x: ArrayView2<T>,
    params: &SaeParams<T>,
    cfg: &GateConfig,
    dead: &[bool],
    rng: &mut R,
) -> Result<ForwardTrace<T>> {
    cfg.validate()?;
    params.check_config(cfg)?;
    if dead.len() != cfg.m {
        return Err(Error::dims("dead mask", cfg.m, dead.len()));
    }
    let z = encode_preacts(x, params)?;
    let scores = score_features(z.view(), cfg.rule, cfg.lambda, cfg.eps_entropy, rng)?;
    let pool = select_pool(scores.as_slice().expect("contiguous"), cfg.k, cfg.ell)?;
    let codes = if pool.iter().all(|&c| c) {
        batch_topk(z.view(), cfg.k)?
    } else {
        batch_topk(mask_pool(z.view(), &pool).view(), cfg.k)?
    };
    let x_hat = decode(codes.view(), params)?;
    let loss = total_loss(x, x_hat.view(), z.view(), dead, params, cfg)?;
    Ok(ForwardTrace {
        z,
        scores,
        pool,
        codes,
        x_hat,
        loss_recon: loss.recon,
        loss_aux: loss.aux,
        loss_total: loss.total,
        aux: loss.aux_trace,
        params_fingerprint: params.fingerprint(),
    })
}

/// Inference-mode codes: ReLU preactivations thresholded at `params.theta`.
pub fn infer_codes<T: Scalar>(x: ArrayView2<T>, params: &SaeParams<T>) -> Result<Array2<T>> {
    let z = encode_preacts(x, params)?;
    Ok(apply_threshold(z.view(), params.theta))
}
