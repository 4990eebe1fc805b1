use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 200;
/// Off-diagonal Gram entries above `SHRINK · μ` are clipped each round.
const SHRINK: f64 = 0.9;
const MIN_IMPROVEMENT: f64 = 1e-4;
/// Rounds without a `MIN_IMPROVEMENT` gain before giving up.
const PATIENCE: usize = 20;

/// Welch lower bound on the coherence of `k` unit vectors in `R^d`.
pub fn welch_bound(d: usize, k: usize) -> f64 {
    if k <= d || k < 2 {
        return 0.0;
    }
    (((k - d) as f64) / ((d * (k - 1)) as f64)).sqrt()
}

/// Largest absolute inner product between distinct columns.
pub fn mutual_coherence(a: ArrayView2<f64>) -> f64 {
    if a.ncols() < 2 {
        return 0.0;
    }
    max_off_diagonal(&a.t().dot(&a))
}

fn max_off_diagonal(gram: &Array2<f64>) -> f64 {
    let mut mu: f64 = 0.0;
    for (i, row) in gram.axis_iter(Axis(0)).enumerate() {
        for (j, &g) in row.iter().enumerate() {
            if i != j {
                mu = mu.max(g.abs());
            }
        }
    }
    mu
}

fn normalize_columns(a: &mut Array2<f64>) {
    for mut col in a.axis_iter_mut(Axis(1)) {
        let n = col.dot(&col).sqrt();
        if n > 0.0 {
            col.mapv_inplace(|v| v / n);
        }
    }
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Symmetric eigendecomposition of a small matrix, eigenvalues ascending.
fn sym_eigen(h: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let eig = SymmetricEigen::new(to_na(h));
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Orthonormal basis for the columns of `y` via `Y (YᵀY)^{-1/2}`.
fn orthonormalize(y: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = sym_eigen(&y.t().dot(y));
    let floor = vals.last().copied().unwrap_or(0.0).abs() * 1e-14 + f64::MIN_POSITIVE;
    let mut scaled = vecs;
    for (mut col, &l) in scaled.axis_iter_mut(Axis(1)).zip(&vals) {
        col.mapv_inplace(|v| v / l.max(floor).sqrt());
    }
    y.dot(&scaled)
}

/// Gram–Schmidt on the columns (`k ≤ d`), run twice for stability.
fn orthonormal_columns(a: &mut Array2<f64>) {
    for _ in 0..2 {
        for j in 0..a.ncols() {
            for i in 0..j {
                let proj = a.column(i).dot(&a.column(j));
                let qi = a.column(i).to_owned();
                a.column_mut(j).scaled_add(-proj, &qi);
            }
            let n = a.column(j).dot(&a.column(j)).sqrt();
            if n > 0.0 {
                a.column_mut(j).mapv_inplace(|v| v / n);
            }
        }
    }
}

/// Low-coherence dictionary `A ∈ R^{d×k}` with unit-norm columns.
///
/// Starts from Gaussian columns and alternates two projections: clip the
/// off-diagonal Gram entries to `max(welch, 0.9·μ)` (μ the current
/// coherence), then return to a rank-`d` factor through the top-`d`
/// eigenpairs of the clipped Gram and renormalize columns. The top
/// eigenspace is tracked by one warm-started subspace-iteration step with a
/// Rayleigh–Ritz solve. Runs up to `max_iter` rounds, stopping early once the
/// best coherence has not improved by `1e-4` for 20 rounds, and returns the
/// best dictionary seen (never worse than the random start).
///
/// With `k ≤ d` the columns are simply orthonormalized.
pub fn generate_dictionary(d: usize, k: usize, seed: u64, max_iter: usize) -> Result<Array2<f64>> {
    if d == 0 || k == 0 {
        return Err(Error::Config(format!(
            "dictionary needs d >= 1 and k >= 1 (d={d}, k={k})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::from_shape_fn((d, k), |_| StandardNormal.sample(&mut rng));
    normalize_columns(&mut a);
    if k <= d {
        orthonormal_columns(&mut a);
        return Ok(a);
    }

    let welch = welch_bound(d, k);
    let mut gram = a.t().dot(&a);
    let mut best_mu = max_off_diagonal(&gram);
    let mut best = a.clone();
    let mut stale = 0;
    for _ in 0..max_iter {
        let mu = max_off_diagonal(&gram);
        let t = welch.max(SHRINK * mu);
        for (i, mut row) in gram.axis_iter_mut(Axis(0)).enumerate() {
            for (j, g) in row.iter_mut().enumerate() {
                *g = if i == j { 1.0 } else { g.clamp(-t, t) };
            }
        }

        // Top-d eigenspace of the clipped Gram, warm-started at the row space of A.
        let q = orthonormalize(&a.t().to_owned());
        let q = orthonormalize(&gram.dot(&q));
        let gq = gram.dot(&q);
        let (vals, vecs) = sym_eigen(&q.t().dot(&gq));
        let ritz = q.dot(&vecs);
        let mut next = ritz.t().to_owned();
        for (mut row, &l) in next.axis_iter_mut(Axis(0)).zip(&vals) {
            row.mapv_inplace(|v| v * l.max(0.0).sqrt());
        }
        normalize_columns(&mut next);
        a = next;

        gram = a.t().dot(&a);
        let mu = max_off_diagonal(&gram);
        if mu < best_mu - MIN_IMPROVEMENT {
            stale = 0;
        } else {
            stale += 1;
        }
        if mu < best_mu {
            best_mu = mu;
            best.assign(&a);
        }
        if stale >= PATIENCE {
            break;
        }
    }
    Ok(best)
}
