//! Metrics that need no language model.
//!
//! Reconstruction ([`fvu`]), feature density ([`feature_density`]),
//! ground-truth recovery through Hungarian matching ([`hungarian_match`],
//! [`bucket_recovery`]), activation-frequency fidelity
//! ([`frequency_correlation`]), and decoder similarity across models
//! ([`mmcs`], [`best_match_report`]).

mod assignment;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use assignment::linear_assignment;

use crate::sae::{batch_topk, encode_preacts, infer_codes, GateConfig, SaeParams};
use crate::synth::{Bucket, SynthDataset};
use crate::{Error, Result, Scalar};

/// Default firing-frequency cutoff for "dense" features.
pub const DENSITY_CUTOFF: f64 = 0.10;
/// Default |cosine| needed to count a ground-truth feature as recovered.
pub const RECOVERY_THRESHOLD: f64 = 0.7;

/// Fraction of variance unexplained, `‖X − X̂‖² / ‖X − mean(X)‖²`.
///
/// The baseline is the per-dimension mean over samples.
pub fn fvu<T: Scalar>(x: ArrayView2<T>, x_hat: ArrayView2<T>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(Error::dims("fvu", x.dim(), x_hat.dim()));
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("fvu of zero samples"));
    }
    let xf = x.mapv(|v| v.to_f64_lossless());
    let mean = xf.mean_axis(Axis(0)).expect("nonempty");
    let total: f64 = (&xf - &mean).iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Undefined("fvu of a constant input"));
    }
    let resid: f64 = xf
        .iter()
        .zip(x_hat.iter())
        .map(|(a, b)| {
            let e = a - b.to_f64_lossless();
            e * e
        })
        .sum();
    Ok(resid / total)
}

/// Streaming per-feature firing counter.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringCounts {
    pub counts: Vec<u64>,
    pub tokens: u64,
    pub nnz: u64,
}

impl FiringCounts {
    pub fn new(m: usize) -> Self {
        FiringCounts {
            counts: vec![0; m],
            tokens: 0,
            nnz: 0,
        }
    }

    /// Counts strictly positive codes.
    pub fn add<T: Scalar>(&mut self, codes: ArrayView2<T>) {
        for row in codes.axis_iter(Axis(0)) {
            for (c, &v) in self.counts.iter_mut().zip(row.iter()) {
                if v > T::zero() {
                    *c += 1;
                    self.nnz += 1;
                }
            }
        }
        self.tokens += codes.nrows() as u64;
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.tokens.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Fraction of features firing on more than `cutoff` of tokens.
    pub fn density_frac(&self, cutoff: f64) -> f64 {
        let m = self.counts.len().max(1) as f64;
        self.frequencies().iter().filter(|&&f| f > cutoff).count() as f64 / m
    }

    /// Fraction of features that never fired.
    pub fn dead_frac(&self) -> f64 {
        let m = self.counts.len().max(1) as f64;
        self.counts.iter().filter(|&&c| c == 0).count() as f64 / m
    }

    pub fn mean_l0(&self) -> f64 {
        self.nnz as f64 / self.tokens.max(1) as f64
    }
}

/// Fraction of features firing on more than `cutoff` of tokens, with the
/// per-feature firing frequencies.
pub fn feature_density<T: Scalar>(codes: ArrayView2<T>, cutoff: f64) -> (f64, Vec<f64>) {
    let mut counts = FiringCounts::new(codes.ncols());
    counts.add(codes);
    (counts.density_frac(cutoff), counts.frequencies())
}

/// Cosine similarity between every row of `a` and every row of `b`.
///
/// Computed as `⟨a,b⟩ / √(‖a‖²‖b‖²)` so identical rows score exactly 1.
/// Zero rows have cosine 0 with everything.
pub fn cosine_matrix<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::dims("cosine inputs", a.ncols(), b.ncols()));
    }
    let a = a.mapv(|v| v.to_f64_lossless());
    let b = b.mapv(|v| v.to_f64_lossless());
    let sq = |m: &Array2<f64>| -> Vec<f64> { m.outer_iter().map(|r| r.dot(&r)).collect() };
    let (na, nb) = (sq(&a), sq(&b));
    let mut out = Array2::<f64>::zeros((a.nrows(), b.nrows()));
    out.outer_iter_mut()
        .into_par_iter()
        .zip(a.outer_iter().into_par_iter())
        .zip(na.par_iter())
        .for_each(|((mut row, ra), &sa)| {
            for ((o, rb), &sb) in row.iter_mut().zip(b.outer_iter()).zip(&nb) {
                let denom = (sa * sb).sqrt();
                *o = if denom > 0.0 {
                    ra.dot(&rb) / denom
                } else {
                    0.0
                };
            }
        });
    Ok(out)
}

/// One learned ↔ ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub learned: usize,
    pub truth: usize,
    /// `|cos|` between the decoder row and the dictionary atom.
    pub similarity: f64,
}

/// Optimal one-to-one matching between learned and ground-truth features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by learned index.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_learned: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

impl MatchResult {
    pub fn total_similarity(&self) -> f64 {
        self.pairs.iter().map(|p| p.similarity).sum()
    }

    /// Best similarity reached by each ground-truth feature (0 if unmatched).
    pub fn truth_similarity(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k];
        for p in &self.pairs {
            out[p.truth] = p.similarity;
        }
        out
    }
}

/// Hungarian matching of decoder rows (`m × d`) to dictionary columns
/// (`d × k`) maximizing total `|cos|` over `min(m, k)` pairs.
///
/// Absolute cosine is used because a ReLU code can only represent a signed
/// atom through a decoder row pointing either way.
pub fn hungarian_match<T: Scalar>(w_dec: ArrayView2<T>, a: ArrayView2<T>) -> Result<MatchResult> {
    if w_dec.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Empty("hungarian_match input"));
    }
    let sim = cosine_matrix(w_dec, a.t())?.mapv(f64::abs);
    let cost = sim.mapv(|s| 1.0 - s);
    let assignment = linear_assignment(cost.view())?;
    let (m, k) = sim.dim();
    let mut truth_used = vec![false; k];
    let mut pairs = Vec::new();
    let mut unmatched_learned = Vec::new();
    for (i, col) in assignment.into_iter().enumerate() {
        match col {
            Some(j) => {
                truth_used[j] = true;
                pairs.push(MatchedPair {
                    learned: i,
                    truth: j,
                    similarity: sim[[i, j]],
                });
            }
            None => unmatched_learned.push(i),
        }
    }
    debug_assert_eq!(pairs.len(), m.min(k));
    Ok(MatchResult {
        pairs,
        unmatched_learned,
        unmatched_truth: (0..k).filter(|&j| !truth_used[j]).collect(),
    })
}

/// Fraction of each bucket's ground-truth features matched at `≥ threshold`,
/// in [`Bucket::ALL`] order. Empty buckets report 0.
pub fn bucket_recovery(matches: &MatchResult, labels: &[Bucket], threshold: f64) -> [f64; 4] {
    let mut hits = [0usize; 4];
    let mut sizes = [0usize; 4];
    for b in labels {
        sizes[b.index()] += 1;
    }
    for p in &matches.pairs {
        if p.similarity >= threshold {
            hits[labels[p.truth].index()] += 1;
        }
    }
    std::array::from_fn(|i| {
        if sizes[i] == 0 {
            0.0
        } else {
            hits[i] as f64 / sizes[i] as f64
        }
    })
}

/// Pearson correlation; undefined for fewer than two points or a constant vector.
pub fn frequency_correlation(learned: &[f64], truth: &[f64]) -> Result<f64> {
    if learned.len() != truth.len() {
        return Err(Error::dims(
            "frequency_correlation",
            learned.len(),
            truth.len(),
        ));
    }
    let n = learned.len();
    if n < 2 {
        return Err(Error::Undefined("correlation of fewer than two pairs"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(learned), mean(truth));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in learned.iter().zip(truth) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean over rows of `w1` of the best cosine against any row of `w2`.
///
/// Not symmetric in its arguments.
pub fn mmcs<T: Scalar>(w1: ArrayView2<T>, w2: ArrayView2<T>) -> Result<f64> {
    if w1.nrows() == 0 || w2.nrows() == 0 {
        return Err(Error::Empty("mmcs input"));
    }
    let cos = cosine_matrix(w1, w2)?;
    let total: f64 = cos
        .axis_iter(Axis(0))
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / w1.nrows() as f64)
}

/// Closest decoder row in another model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub feature: usize,
    pub best_match: usize,
    pub cosine: f64,
}

/// For each row of `w_a`, the highest-cosine row of `w_b` (first index on
/// ties), sorted ascending by cosine so the most model-specific features
/// come first.
pub fn best_match_report<T: Scalar>(
    w_a: ArrayView2<T>,
    w_b: ArrayView2<T>,
) -> Result<Vec<BestMatch>> {
    if w_b.nrows() == 0 {
        return Err(Error::Empty("best_match_report reference"));
    }
    let cos = cosine_matrix(w_a, w_b)?;
    let mut out: Vec<BestMatch> = cos
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let (j, &c) = row
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
            BestMatch {
                feature: i,
                best_match: j,
                cosine: c,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.cosine
            .total_cmp(&b.cosine)
            .then(a.feature.cmp(&b.feature))
    });
    Ok(out)
}

/// All metrics of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fvu: f64,
    pub fve: f64,
    pub mean_l0: f64,
    pub density_frac: f64,
    /// Recovery rate per bucket in LF_HA, HF_HA, LF_LA, HF_LA order.
    pub per_bucket_recovery: [f64; 4],
    /// `None` when the correlation is undefined.
    pub freq_corr: Option<f64>,
    /// MMCS of the learned decoder against the ground-truth atoms.
    pub mmcs: f64,
    pub dead_frac: f64,
}

/// How evaluation turns preactivations into codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Keep entries above the learned threshold.
    Threshold,
    /// BatchTopK over evaluation chunks (used before the threshold exists).
    BatchTopK,
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub chunk_size: usize,
    pub density_cutoff: f64,
    pub recovery_threshold: f64,
    pub mode: InferenceMode,
}

impl EvalOptions {
    /// Threshold inference once the threshold has started, BatchTopK otherwise.
    pub fn for_params<T: Scalar>(params: &SaeParams<T>) -> Self {
        EvalOptions {
            chunk_size: 4096,
            density_cutoff: DENSITY_CUTOFF,
            recovery_threshold: RECOVERY_THRESHOLD,
            mode: if params.theta > T::zero() {
                InferenceMode::Threshold
            } else {
                InferenceMode::BatchTopK
            },
        }
    }
}

/// Inference codes and reconstruction for one chunk.
pub fn infer_chunk<T: Scalar>(
    x: ArrayView2<T>,
    params: &SaeParams<T>,
    gate: &GateConfig,
    mode: InferenceMode,
) -> Result<Array2<T>> {
    match mode {
        InferenceMode::Threshold => infer_codes(x, params),
        InferenceMode::BatchTopK => batch_topk(encode_preacts(x, params)?.view(), gate.k),
    }
}

/// Runs the model over the whole dataset and computes every metric.
pub fn evaluate(
    params: &SaeParams<f32>,
    gate: &GateConfig,
    data: &SynthDataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    params.check_config(gate)?;
    if data.x.ncols() != gate.d {
        return Err(Error::dims("dataset dimension", gate.d, data.x.ncols()));
    }
    if data.truth.d() != gate.d {
        return Err(Error::dims(
            "ground-truth dimension",
            gate.d,
            data.truth.d(),
        ));
    }
    let chunk = opts.chunk_size.max(1);
    let mut counts = FiringCounts::new(gate.m);
    let mut resid = 0.0;
    for x in data.x.axis_chunks_iter(Axis(0), chunk) {
        let codes = infer_chunk(x, params, gate, opts.mode)?;
        counts.add(codes.view());
        let x_hat = crate::sae::decode(codes.view(), params)?;
        resid += x
            .iter()
            .zip(x_hat.iter())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>();
    }
    let xf = data.x.mapv(|v| v as f64);
    let mean = xf
        .mean_axis(Axis(0))
        .ok_or(Error::Empty("evaluation data"))?;
    let total: f64 = (&xf - &mean).iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Undefined("fvu of a constant input"));
    }
    let fvu = resid / total;

    let atoms = data.truth.atoms();
    let matches = hungarian_match(params.w_dec.view(), data.truth.a.view())?;
    let per_bucket_recovery =
        bucket_recovery(&matches, &data.truth.labels, opts.recovery_threshold);
    let learned_freq = counts.frequencies();
    let true_p = data.truth.feature_p();
    let (lf, tf): (Vec<f64>, Vec<f64>) = matches
        .pairs
        .iter()
        .map(|p| (learned_freq[p.learned], true_p[p.truth]))
        .unzip();

    Ok(EvalReport {
        fvu,
        fve: 1.0 - fvu,
        mean_l0: counts.mean_l0(),
        density_frac: counts.density_frac(opts.density_cutoff),
        per_bucket_recovery,
        freq_corr: frequency_correlation(&lf, &tf).ok(),
        mmcs: mmcs(params.w_dec.view(), atoms.view())?,
        dead_frac: counts.dead_frac(),
    })
}

/// Per-feature firing frequencies under inference, for external analysis.
pub fn firing_frequencies(
    params: &SaeParams<f32>,
    gate: &GateConfig,
    x: ArrayView2<f32>,
    opts: &EvalOptions,
) -> Result<Array1<f64>> {
    let mut counts = FiringCounts::new(gate.m);
    for chunk in x.axis_chunks_iter(Axis(0), opts.chunk_size.max(1)) {
        counts.add(infer_chunk(chunk, params, gate, opts.mode)?.view());
    }
    Ok(Array1::from(counts.frequencies()))
}
