//! Ground-truth sparse-superposition data.
//!
//! `X = S·Aᵀ + ε` where `A` (`d × k`, unit columns) is a low-coherence
//! dictionary, `S` (`n × k`) holds Bernoulli–Gaussian codes whose frequency
//! and scale depend on each feature's bucket, and `ε` is Gaussian noise at a
//! fixed SNR. With `k > d` the features are forced into superposition.

mod codes;
mod dictionary;
mod format;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use codes::{assign_buckets, clean_signal, sample_codes, synthesize, SparseCodes};
pub use dictionary::{generate_dictionary, mutual_coherence, welch_bound, DEFAULT_MAX_ITER};
pub use format::{read_dataset, read_stats, stats_path, write_dataset, write_stats, SSYN_VERSION};

use crate::{Error, Result};

/// Frequency × magnitude bucket of a ground-truth feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    #[serde(rename = "LF_HA")]
    LfHa,
    #[serde(rename = "HF_HA")]
    HfHa,
    #[serde(rename = "LF_LA")]
    LfLa,
    #[serde(rename = "HF_LA")]
    HfLa,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::LfHa, Bucket::HfHa, Bucket::LfLa, Bucket::HfLa];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Bucket> {
        Bucket::ALL.get(i as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::LfHa => "LF_HA",
            Bucket::HfHa => "HF_HA",
            Bucket::LfLa => "LF_LA",
            Bucket::HfLa => "HF_LA",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Bucket::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown bucket `{s}`")))
    }
}

/// Activation probability and coefficient scale of one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub bucket: Bucket,
    pub p: f64,
    pub sigma: f64,
}

impl BucketSpec {
    /// Low/high frequency 0.02/0.20 crossed with high/low amplitude 1.0/0.2.
    pub fn defaults() -> [BucketSpec; 4] {
        let spec = |bucket, p, sigma| BucketSpec { bucket, p, sigma };
        [
            spec(Bucket::LfHa, 0.02, 1.0),
            spec(Bucket::HfHa, 0.20, 1.0),
            spec(Bucket::LfLa, 0.02, 0.2),
            spec(Bucket::HfLa, 0.20, 0.2),
        ]
    }

    /// `p = 0` is accepted so a bucket can be switched off.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "{}: p must lie in [0, 1]",
                self.bucket
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "{}: sigma must be positive",
                self.bucket
            )));
        }
        Ok(())
    }

    /// `E|N(0, σ²)| = σ·√(2/π)`.
    pub fn expected_abs(&self) -> f64 {
        self.sigma * (2.0 / std::f64::consts::PI).sqrt()
    }
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub buckets: [BucketSpec; 4],
    pub dictionary_max_iter: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::desk()
    }
}

impl SynthConfig {
    /// Laptop-sized profile.
    pub fn desk() -> Self {
        SynthConfig {
            d: 64,
            k: 256,
            n: 20_000,
            seed: 0,
            snr_db: 20.0,
            buckets: BucketSpec::defaults(),
            dictionary_max_iter: DEFAULT_MAX_ITER,
        }
    }

    /// `d = 256`, `k = 1024`, `n = 10,000`.
    pub fn full() -> Self {
        SynthConfig {
            d: 256,
            k: 1024,
            n: 10_000,
            ..SynthConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.n == 0 {
            return Err(Error::Config("d, k and n must be positive".into()));
        }
        if self.k < 4 {
            return Err(Error::Config("need k >= 4 to populate four buckets".into()));
        }
        for (i, spec) in self.buckets.iter().enumerate() {
            spec.validate()?;
            if spec.bucket.index() != i {
                return Err(Error::Config(format!(
                    "bucket specs must be listed in order LF_HA, HF_HA, LF_LA, HF_LA (found {} at {i})",
                    spec.bucket
                )));
            }
        }
        Ok(())
    }
}

/// Everything needed to score a learned dictionary against the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGroundTruth {
    /// Dictionary, `d × k`, unit-norm columns.
    pub a: Array2<f32>,
    pub codes: SparseCodes,
    pub labels: Vec<Bucket>,
    pub buckets: [BucketSpec; 4],
    pub snr_db: f64,
    pub seed: u64,
}

impl SynthGroundTruth {
    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    /// Activation probability of each feature.
    pub fn feature_p(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|b| self.buckets[b.index()].p)
            .collect()
    }

    /// Dictionary atoms as rows (`k × d`), the orientation of SAE decoders.
    pub fn atoms(&self) -> Array2<f32> {
        self.a.t().to_owned()
    }
}

/// Generated data plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub truth: SynthGroundTruth,
    /// Observations, `n × d`.
    pub x: Array2<f32>,
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const DICTIONARY_TAG: u64 = 1;
const LABEL_TAG: u64 = 2;
const CODE_TAG: u64 = 3;
const NOISE_TAG: u64 = 4;

/// Runs the full generator. Identical configs give identical bytes.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let a64 = generate_dictionary(
        cfg.d,
        cfg.k,
        derive_seed(cfg.seed, DICTIONARY_TAG),
        cfg.dictionary_max_iter,
    )?;
    let mut a = a64.mapv(|v| v as f32);
    // Renormalize after rounding so stored columns are unit norm in f32 arithmetic too.
    for mut col in a.columns_mut() {
        let n = col.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        col.mapv_inplace(|v| (v as f64 / n) as f32);
    }
    let labels = assign_buckets(cfg.k, derive_seed(cfg.seed, LABEL_TAG));
    let codes = sample_codes(
        cfg.n,
        &labels,
        &cfg.buckets,
        derive_seed(cfg.seed, CODE_TAG),
    )?;
    let x = synthesize(
        &codes,
        a.view(),
        cfg.snr_db,
        derive_seed(cfg.seed, NOISE_TAG),
    )?;
    Ok(SynthDataset {
        truth: SynthGroundTruth {
            a,
            codes,
            labels,
            buckets: cfg.buckets,
            snr_db: cfg.snr_db,
            seed: cfg.seed,
        },
        x,
    })
}

/// Per-bucket summary of the generated codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: Bucket,
    pub count: usize,
    pub p: f64,
    pub sigma: f64,
    /// Mean |coefficient| over active entries.
    pub mean_abs: f64,
    pub std_abs: f64,
    /// `σ·√(2/π)`.
    pub expected_mean_abs: f64,
}

/// Dataset summary written next to the `SSYN` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub coherence: f64,
    pub welch_bound: f64,
    /// `Σ_j p_j`.
    pub expected_l0: f64,
    pub observed_l0: f64,
    /// `10·log10(meansq(S·Aᵀ) / meansq(X − S·Aᵀ))`; `None` without noise.
    pub measured_snr_db: Option<f64>,
    pub buckets: Vec<BucketStats>,
}

/// Statistics of a generated dataset.
pub fn dataset_stats(data: &SynthDataset) -> Result<SynthStats> {
    let gt = &data.truth;
    let a64 = gt.a.mapv(|v| v as f64);
    let coherence = mutual_coherence(a64.view());
    let expected_l0: f64 = gt.feature_p().iter().sum();

    let mut abs_sum = [0.0f64; 4];
    let mut abs_sq = [0.0f64; 4];
    let mut active = [0usize; 4];
    for &(_, c, v) in &gt.codes.entries {
        let b = gt.labels[c as usize].index();
        let a = (v as f64).abs();
        abs_sum[b] += a;
        abs_sq[b] += a * a;
        active[b] += 1;
    }
    let buckets = Bucket::ALL
        .iter()
        .map(|&b| {
            let i = b.index();
            let spec = gt.buckets[i];
            let cnt = active[i].max(1) as f64;
            let mean = abs_sum[i] / cnt;
            let var = (abs_sq[i] / cnt - mean * mean).max(0.0);
            BucketStats {
                bucket: b,
                count: gt.labels.iter().filter(|&&l| l == b).count(),
                p: spec.p,
                sigma: spec.sigma,
                mean_abs: if active[i] == 0 { 0.0 } else { mean },
                std_abs: var.sqrt(),
                expected_mean_abs: spec.expected_abs(),
            }
        })
        .collect();

    Ok(SynthStats {
        d: gt.d(),
        k: gt.k(),
        n: data.x.nrows(),
        seed: gt.seed,
        snr_db: gt.snr_db,
        coherence,
        welch_bound: welch_bound(gt.d(), gt.k()),
        expected_l0,
        observed_l0: gt.codes.mean_l0(),
        measured_snr_db: measured_snr_db(&gt.codes, gt.a.view(), data.x.view())?,
        buckets,
    })
}

fn measured_snr_db(
    codes: &SparseCodes,
    a: ArrayView2<f32>,
    x: ArrayView2<f32>,
) -> Result<Option<f64>> {
    let clean = clean_signal(codes, a)?;
    if clean.dim() != x.dim() {
        return Err(Error::dims("observations", clean.dim(), x.dim()));
    }
    let signal = codes::mean_square(clean.view());
    let noise = codes::mean_square((&x.mapv(|v| v as f64) - &clean).view());
    Ok((noise > 0.0).then(|| 10.0 * (signal / noise).log10()))
}
