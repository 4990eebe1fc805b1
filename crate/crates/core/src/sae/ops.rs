use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::sae::config::pool_size;
use crate::sae::{GateConfig, SaeParams, ScoringRule};
use crate::{Error, Result, Scalar};

/// Post-ReLU encoder preactivations `Z = ReLU((X − b_dec)·W_encᵀ + b_enc)`.
pub fn encode_preacts<T: Scalar>(x: ArrayView2<T>, params: &SaeParams<T>) -> Result<Array2<T>> {
    let mut z = preacts_raw(x, params)?;
    z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
    Ok(z)
}

/// Preactivations before the ReLU.
pub(crate) fn preacts_raw<T: Scalar>(x: ArrayView2<T>, params: &SaeParams<T>) -> Result<Array2<T>> {
    params.check_shapes()?;
    if x.ncols() != params.d() {
        return Err(Error::dims("encode input columns", params.d(), x.ncols()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("encoder input"));
    }
    let centered = center(x, params);
    let mut p = centered.dot(&params.w_enc.t());
    p += &params.b_enc;
    Ok(p)
}

pub(crate) fn center<T: Scalar>(x: ArrayView2<T>, params: &SaeParams<T>) -> Array2<T> {
    &x - &params.b_dec
}

/// Batch-level score for every feature (column of `z`).
///
/// Higher scores are preferred by [`select_pool`]. Entropy scores are the
/// negated column entropy, and all-zero columns score `−∞` under that rule.
/// The uniform rule draws fresh `U(0,1)` scores from `rng`; the other rules
/// never touch it.
pub fn score_features<T: Scalar, R: Rng + ?Sized>(
    z: ArrayView2<T>,
    rule: ScoringRule,
    lambda: f64,
    eps_entropy: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let m = z.ncols();
    if z.iter().any(|&v| v < T::zero() || v.is_nan()) {
        return Err(Error::Contract(
            "feature scores require nonnegative activations".into(),
        ));
    }
    let scores = match rule {
        ScoringRule::L2Norm => column_sum_squares(z).mapv(f64::sqrt),
        ScoringRule::SquaredL2 => column_sum_squares(z).mapv(|s| s + lambda),
        ScoringRule::Entropy => {
            let totals = column_sums(z);
            let mut acc = Array1::<f64>::zeros(m);
            for row in z.axis_iter(Axis(0)) {
                for ((a, &v), &total) in acc.iter_mut().zip(row.iter()).zip(totals.iter()) {
                    let v = v.to_f64_lossless();
                    if v > 0.0 {
                        let share = v / total;
                        *a += share * (share + eps_entropy).ln();
                    }
                }
            }
            Zip::from(&mut acc).and(&totals).for_each(|a, &t| {
                if t <= 0.0 {
                    *a = f64::NEG_INFINITY;
                }
            });
            acc
        }
        ScoringRule::Uniform => Array1::from_shape_fn(m, |_| rng.random::<f64>()),
    };
    Ok(scores)
}

fn column_sum_squares<T: Scalar>(z: ArrayView2<T>) -> Array1<f64> {
    let mut acc = Array1::<f64>::zeros(z.ncols());
    for row in z.axis_iter(Axis(0)) {
        Zip::from(&mut acc).and(&row).for_each(|a, &v| {
            let v = v.to_f64_lossless();
            *a += v * v;
        });
    }
    acc
}

fn column_sums<T: Scalar>(z: ArrayView2<T>) -> Array1<f64> {
    let mut acc = Array1::<f64>::zeros(z.ncols());
    for row in z.axis_iter(Axis(0)) {
        Zip::from(&mut acc)
            .and(&row)
            .for_each(|a, &v| *a += v.to_f64_lossless());
    }
    acc
}

/// Descending by score, then ascending by index.
fn by_score_then_index(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Candidate pool: the `min(⌊ell·k⌋, m)` highest-scoring features.
///
/// Ties at the cutoff go to the smaller feature index.
pub fn select_pool(scores: &[f64], k: usize, ell: f64) -> Result<Vec<bool>> {
    if !(ell >= 1.0) || !ell.is_finite() {
        return Err(Error::Config(format!(
            "ell must be finite and >= 1, got {ell}"
        )));
    }
    let m = scores.len();
    let p = pool_size(k, ell, m);
    if p >= m {
        return Ok(vec![true; m]);
    }
    let mut pool = vec![false; m];
    if p == 0 {
        return Ok(pool);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.select_nth_unstable_by(p - 1, by_score_then_index(scores));
    for &j in &order[..p] {
        pool[j] = true;
    }
    Ok(pool)
}

/// Zeroes every column outside the pool.
pub fn mask_pool<T: Scalar>(z: ArrayView2<T>, pool: &[bool]) -> Array2<T> {
    let mut out = z.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (v, &keep) in row.iter_mut().zip(pool) {
            if !keep {
                *v = T::zero();
            }
        }
    }
    out
}

/// BatchTopK: keeps the `B·k` largest strictly positive entries of the batch.
///
/// Ties at the cutoff go to the lexicographically smaller `(row, column)`.
pub fn batch_topk<T: Scalar>(zp: ArrayView2<T>, k: usize) -> Result<Array2<T>> {
    let (b, m) = zp.dim();
    let budget = b * k;
    if budget == 0 {
        return Err(Error::EmptySelection);
    }
    let mut candidates: Vec<(T, usize)> = zp
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > T::zero())
        .map(|(i, &v)| (v, i))
        .collect();
    if candidates.len() > budget {
        candidates.select_nth_unstable_by(budget - 1, |a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        candidates.truncate(budget);
    }
    let mut out = Array2::zeros((b, m));
    let flat = out
        .as_slice_mut()
        .expect("freshly allocated arrays are contiguous");
    for (v, i) in candidates {
        flat[i] = v;
    }
    Ok(out)
}

/// Inference-time sparsification: keeps entries strictly above `theta`.
pub fn apply_threshold<T: Scalar>(zp: ArrayView2<T>, theta: T) -> Array2<T> {
    zp.mapv(|v| if v > theta { v } else { T::zero() })
}

/// Reconstruction `X̂ = F·W_dec + b_dec`.
pub fn decode<T: Scalar>(f: ArrayView2<T>, params: &SaeParams<T>) -> Result<Array2<T>> {
    params.check_shapes()?;
    if f.ncols() != params.m() {
        return Err(Error::dims("decode input columns", params.m(), f.ncols()));
    }
    let mut x_hat = f.dot(&params.w_dec);
    x_hat += &params.b_dec;
    Ok(x_hat)
}

/// Per-token top-`k_aux` among dead features (strictly positive entries only).
pub fn aux_topk<T: Scalar>(z: ArrayView2<T>, dead: &[bool], k_aux: usize) -> Array2<T> {
    let mut out = Array2::zeros(z.dim());
    if k_aux == 0 {
        return out;
    }
    let mut cand: Vec<(T, usize)> = Vec::new();
    for (zr, mut or) in z.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        cand.clear();
        cand.extend(
            zr.iter()
                .enumerate()
                .filter(|&(j, &v)| dead[j] && v > T::zero())
                .map(|(j, &v)| (v, j)),
        );
        if cand.len() > k_aux {
            cand.select_nth_unstable_by(k_aux - 1, |a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            cand.truncate(k_aux);
        }
        for &(v, j) in &cand {
            or[j] = v;
        }
    }
    out
}

/// Auxiliary-loss intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AuxTrace<T> {
    /// Reconstruction residual `e = X − X̂`, treated as a constant target.
    pub residual: Array2<T>,
    /// Dead-feature codes used to fit the residual.
    pub codes: Array2<T>,
    /// `ê = codes · W_dec` (no bias).
    pub recon: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct LossParts<T> {
    pub recon: f64,
    pub aux: f64,
    pub total: f64,
    pub aux_trace: Option<AuxTrace<T>>,
}

fn sq_frobenius_diff<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|&x, &y| {
        let d = x.to_f64_lossless() - y.to_f64_lossless();
        acc += d * d;
    });
    acc
}

/// Reconstruction loss, auxiliary dead-feature loss and their weighted sum.
///
/// Both squared Frobenius norms are divided by the batch size. The auxiliary
/// term fits the residual with the top `min(k_aux, #dead)` dead features of
/// each token and is zero when nothing is dead.
pub fn total_loss<T: Scalar>(
    x: ArrayView2<T>,
    x_hat: ArrayView2<T>,
    z: ArrayView2<T>,
    dead: &[bool],
    params: &SaeParams<T>,
    cfg: &GateConfig,
) -> Result<LossParts<T>> {
    if x.dim() != x_hat.dim() {
        return Err(Error::dims("loss inputs", x.dim(), x_hat.dim()));
    }
    if dead.len() != z.ncols() {
        return Err(Error::dims("dead mask", z.ncols(), dead.len()));
    }
    let b = x.nrows().max(1) as f64;
    let recon = sq_frobenius_diff(x, x_hat) / b;

    let n_dead = dead.iter().filter(|&&d| d).count();
    let (aux, aux_trace) = if n_dead == 0 {
        (0.0, None)
    } else {
        let k_aux = cfg.k_aux().min(n_dead);
        let residual = &x - &x_hat;
        let codes = aux_topk(z, dead, k_aux);
        let recon_aux = codes.dot(&params.w_dec);
        let aux = sq_frobenius_diff(residual.view(), recon_aux.view()) / b;
        (
            aux,
            Some(AuxTrace {
                residual,
                codes,
                recon: recon_aux,
            }),
        )
    };
    Ok(LossParts {
        recon,
        aux,
        total: recon + cfg.alpha * aux,
        aux_trace,
    })
}
