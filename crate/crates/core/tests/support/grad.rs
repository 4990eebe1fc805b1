use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sampled_sae_core::sae::forward_train;
use sampled_sae_core::trainer::backward;
use sampled_sae_core::{GateConfig, SaeParams, ScoringRule};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub fn gaussian(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

/// Loss with the selection masks fixed: main-path support `main`, aux
/// support `aux`, and the aux target `e` held constant.
pub fn pinned_loss(
    x: &Array2<f64>,
    p: &SaeParams<f64>,
    main: &Array2<bool>,
    aux: &Array2<bool>,
    e: &Array2<f64>,
    alpha: f64,
    with_aux: bool,
) -> f64 {
    let (b, d) = x.dim();
    let m = p.w_enc.nrows();
    let mut z = Array2::<f64>::zeros((b, m));
    for i in 0..b {
        for j in 0..m {
            let mut s = p.b_enc[j];
            for t in 0..d {
                s += (x[[i, t]] - p.b_dec[t]) * p.w_enc[[j, t]];
            }
            z[[i, j]] = s.max(0.0);
        }
    }
    let mut recon = 0.0;
    let mut aux_loss = 0.0;
    for i in 0..b {
        for t in 0..d {
            let mut xh = p.b_dec[t];
            let mut eh = 0.0;
            for j in 0..m {
                if main[[i, j]] {
                    xh += z[[i, j]] * p.w_dec[[j, t]];
                }
                if aux[[i, j]] {
                    eh += z[[i, j]] * p.w_dec[[j, t]];
                }
            }
            recon += (x[[i, t]] - xh).powi(2);
            aux_loss += (e[[i, t]] - eh).powi(2);
        }
    }
    let b = b as f64;
    if with_aux {
        recon / b + alpha * aux_loss / b
    } else {
        recon / b
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

pub enum Which {
    WEnc,
    BEnc,
    WDec,
    BDec,
}

pub fn get<'a>(p: &'a mut SaeParams<f64>, which: &Which, idx: (usize, usize)) -> &'a mut f64 {
    match which {
        Which::WEnc => &mut p.w_enc[idx],
        Which::BEnc => &mut p.b_enc[idx.0],
        Which::WDec => &mut p.w_dec[idx],
        Which::BDec => &mut p.b_dec[idx.0],
    }
}

/// Worst relative error between analytic and finite-difference gradients
/// over every parameter of one random instance. `None` when a selected preactivation sits so
/// when a selected preactivation sits so close to the ReLU kink that the
/// pinned loss is not smooth at scale `H`.
pub fn fd_gradient_error(rule: ScoringRule, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(3..=6);
    let m = rng.random_range(6..=10);
    let k = rng.random_range(1..=3);
    let b = rng.random_range(2..=5);
    let full = m as f64 / k as f64;
    let ell = [1.0, 1.5, 2.0, full][rng.random_range(0..4)]
        .min(full)
        .max(1.0);
    let gate = GateConfig::new(d, m, k, ell, rule);

    let mut w_dec = gaussian((m, d), &mut rng);
    for mut row in w_dec.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
    let params = SaeParams {
        w_enc: &w_dec + &(gaussian((m, d), &mut rng) * 0.3),
        b_enc: Array1::from_shape_fn(m, |_| 0.2 * rng.random::<f64>()),
        w_dec,
        b_dec: Array1::from_shape_fn(d, |_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            0.1 * g
        }),
        theta: 0.0,
    };
    let x = gaussian((b, d), &mut rng);
    let dead: Vec<bool> = (0..m).map(|_| rng.random::<f64>() < 0.4).collect();

    let mut score_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let trace = forward_train(x.view(), &params, &gate, &dead, &mut score_rng).unwrap();
    let grads = backward(&trace, x.view(), &params, &gate).unwrap();

    let main = trace.codes.mapv(|v| v > 0.0);
    let (aux, e, with_aux) = match &trace.aux {
        Some(a) => (a.codes.mapv(|v| v > 0.0), a.residual.clone(), true),
        None => (
            Array2::from_elem((b, m), false),
            Array2::zeros((b, d)),
            false,
        ),
    };
    let margin = trace
        .z
        .iter()
        .zip(main.iter().zip(aux.iter()))
        .filter(|(_, (&a, &c))| a || c)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min);
    if margin < 1e-3 {
        return None;
    }

    let mut worst: f64 = 0.0;
    let cases = [
        (Which::WEnc, (m, d), &grads.w_enc),
        (Which::WDec, (m, d), &grads.w_dec),
    ];
    for (which, (r, c), g) in cases {
        for i in 0..r {
            for j in 0..c {
                let fd = central(
                    &x,
                    &params,
                    &main,
                    &aux,
                    &e,
                    gate.alpha,
                    with_aux,
                    &which,
                    (i, j),
                );
                worst = worst.max(rel_err(g[[i, j]], fd));
            }
        }
    }
    for (which, n, g) in [
        (Which::BEnc, m, &grads.b_enc),
        (Which::BDec, d, &grads.b_dec),
    ] {
        for i in 0..n {
            let fd = central(
                &x,
                &params,
                &main,
                &aux,
                &e,
                gate.alpha,
                with_aux,
                &which,
                (i, 0),
            );
            worst = worst.max(rel_err(g[i], fd));
        }
    }
    Some(worst)
}

#[allow(clippy::too_many_arguments)]
pub fn central(
    x: &Array2<f64>,
    params: &SaeParams<f64>,
    main: &Array2<bool>,
    aux: &Array2<bool>,
    e: &Array2<f64>,
    alpha: f64,
    with_aux: bool,
    which: &Which,
    idx: (usize, usize),
) -> f64 {
    let mut plus = params.clone();
    *get(&mut plus, which, idx) += H;
    let mut minus = params.clone();
    *get(&mut minus, which, idx) -= H;
    (pinned_loss(x, &plus, main, aux, e, alpha, with_aux)
        - pinned_loss(x, &minus, main, aux, e, alpha, with_aux))
        / (2.0 * H)
}
