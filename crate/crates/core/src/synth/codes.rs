use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::synth::{Bucket, BucketSpec};
use crate::{Error, Result};

/// Sparse `n × k` code matrix stored as row-major `(row, col, value)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    pub n: usize,
    pub k: usize,
    /// Sorted by `(row, col)`; values are nonzero.
    pub entries: Vec<(u32, u32, f32)>,
}

impl SparseCodes {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Array2<f32> {
        let mut out = Array2::zeros((self.n, self.k));
        for &(r, c, v) in &self.entries {
            out[[r as usize, c as usize]] = v;
        }
        out
    }

    /// Fraction of rows in which each column is nonzero.
    pub fn column_frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.k];
        for &(_, c, _) in &self.entries {
            counts[c as usize] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.n.max(1) as f64)
            .collect()
    }

    pub fn mean_l0(&self) -> f64 {
        self.nnz() as f64 / self.n.max(1) as f64
    }

    /// Entries grouped per row as `(start, end)` offsets into `entries`.
    pub(crate) fn row_ranges(&self) -> Vec<(usize, usize)> {
        let mut ranges = vec![(0, 0); self.n];
        let mut start = 0;
        for r in 0..self.n {
            let mut end = start;
            while end < self.entries.len() && self.entries[end].0 as usize == r {
                end += 1;
            }
            ranges[r] = (start, end);
            start = end;
        }
        ranges
    }
}

/// Per-row generator: one ChaCha stream per sample, independent of thread count.
pub(crate) fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// iid uniform bucket label for each of `k` features.
pub fn assign_buckets(k: usize, seed: u64) -> Vec<Bucket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| Bucket::ALL[rng.random_range(0..Bucket::ALL.len())])
        .collect()
}

/// `S[i, j] = Bernoulli(p_j) · N(0, σ_j²)` with the bucket parameters of feature `j`.
pub fn sample_codes(
    n: usize,
    labels: &[Bucket],
    specs: &[BucketSpec; 4],
    seed: u64,
) -> Result<SparseCodes> {
    for spec in specs {
        spec.validate()?;
    }
    let k = labels.len();
    let params: Vec<(f64, f64)> = labels
        .iter()
        .map(|&b| {
            let s = &specs[b.index()];
            (s.p, s.sigma)
        })
        .collect();
    let rows: Vec<Vec<(u32, u32, f32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, i);
            let mut row = Vec::new();
            for (j, &(p, sigma)) in params.iter().enumerate() {
                if rng.random::<f64>() < p {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let v = (sigma * g) as f32;
                    if v != 0.0 {
                        row.push((i as u32, j as u32, v));
                    }
                }
            }
            row
        })
        .collect();
    Ok(SparseCodes {
        n,
        k,
        entries: rows.into_iter().flatten().collect(),
    })
}

/// Noise-free signal `S · Aᵀ` in `f64`.
pub fn clean_signal(codes: &SparseCodes, a: ArrayView2<f32>) -> Result<Array2<f64>> {
    if a.ncols() != codes.k {
        return Err(Error::dims("dictionary columns", codes.k, a.ncols()));
    }
    let d = a.nrows();
    let atoms: Array2<f64> = a.t().mapv(|v| v as f64);
    let mut clean = Array2::<f64>::zeros((codes.n, d));
    let ranges = codes.row_ranges();
    clean
        .outer_iter_mut()
        .into_par_iter()
        .zip(ranges.into_par_iter())
        .for_each(|(mut row, (start, end))| {
            for &(_, c, v) in &codes.entries[start..end] {
                row.scaled_add(v as f64, &atoms.row(c as usize));
            }
        });
    Ok(clean)
}

pub(crate) fn mean_square(x: ArrayView2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// `X = S·Aᵀ + ε` with iid Gaussian noise at the requested SNR.
///
/// The noise variance is `meansq(S·Aᵀ) / 10^(snr_db/10)`; an infinite SNR
/// adds no noise.
pub fn synthesize(
    codes: &SparseCodes,
    a: ArrayView2<f32>,
    snr_db: f64,
    seed: u64,
) -> Result<Array2<f32>> {
    let clean = clean_signal(codes, a)?;
    let power = mean_square(clean.view());
    if power == 0.0 {
        return Err(Error::Undefined("SNR of an all-zero signal"));
    }
    if snr_db.is_nan() {
        return Err(Error::Config("snr_db is NaN".into()));
    }
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut x = Array2::<f32>::zeros(clean.dim());
    x.outer_iter_mut()
        .into_par_iter()
        .zip(clean.outer_iter().into_par_iter())
        .enumerate()
        .for_each(|(i, (mut out, src))| {
            let mut rng = row_rng(seed, i);
            for (o, &c) in out.iter_mut().zip(src.iter()) {
                let noise = if std > 0.0 {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    std * g
                } else {
                    0.0
                };
                *o = (c + noise) as f32;
            }
        });
    Ok(x)
}
