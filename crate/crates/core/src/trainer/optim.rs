use ndarray::{ArrayView2, Axis, Zip};

use crate::sae::SaeParams;
use crate::trainer::{SaeGrads, TrainConfig};
use crate::{Error, Result, Scalar};

/// Optimizer and bookkeeping state that evolves alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    /// Adam first moments.
    pub m1: SaeGrads<T>,
    /// Adam second moments.
    pub m2: SaeGrads<T>,
    /// Number of completed optimizer steps.
    pub t: u64,
    /// Step at which each feature last produced a nonzero code.
    pub last_fired: Vec<u64>,
    /// Whether the threshold EMA has received its first value.
    pub theta_started: bool,
}

impl<T: Scalar> OptState<T> {
    pub fn new(d: usize, m: usize) -> Self {
        OptState {
            m1: SaeGrads::zeros(d, m),
            m2: SaeGrads::zeros(d, m),
            t: 0,
            last_fired: vec![0; m],
            theta_started: false,
        }
    }

    /// Features that have not fired for more than `window` steps as of `step`.
    pub fn dead_mask(&self, step: u64, window: u64) -> Vec<bool> {
        self.last_fired
            .iter()
            .map(|&last| step.saturating_sub(last) > window)
            .collect()
    }
}

/// Diagnostics from one optimizer update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping (after decoder projection).
    pub grad_norm: f64,
    pub lr: f64,
}

/// Warmup-scaled learning rate for zero-based step `t`.
pub fn warmup_lr(cfg: &TrainConfig, t: u64) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.lr;
    }
    cfg.lr * ((t + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
}

/// Removes from each decoder-row gradient its component along the row.
pub fn project_decoder_grads<T: Scalar>(w_dec: ArrayView2<T>, grad: &mut SaeGrads<T>) {
    for (row, mut g) in w_dec
        .axis_iter(Axis(0))
        .zip(grad.w_dec.axis_iter_mut(Axis(0)))
    {
        let n2 = row.dot(&row);
        if n2 > T::zero() {
            let coef = g.dot(&row) / n2;
            g.scaled_add(-coef, &row);
        }
    }
}

fn adam_update<T: Scalar, D: ndarray::Dimension>(
    param: &mut ndarray::Array<T, D>,
    grad: &ndarray::Array<T, D>,
    m1: &mut ndarray::Array<T, D>,
    m2: &mut ndarray::Array<T, D>,
    h: &AdamScalars<T>,
) {
    Zip::from(param)
        .and(grad)
        .and(m1)
        .and(m2)
        .for_each(|p, &g, m, v| {
            *m = h.beta1 * *m + h.one_minus_beta1 * g;
            *v = h.beta2 * *v + h.one_minus_beta2 * g * g;
            let m_hat = *m / h.bias1;
            let v_hat = *v / h.bias2;
            *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        });
}

struct AdamScalars<T> {
    beta1: T,
    beta2: T,
    one_minus_beta1: T,
    one_minus_beta2: T,
    bias1: T,
    bias2: T,
    lr: T,
    eps: T,
}

/// One Adam update with decoder-manifold handling.
///
/// Order: project decoder-row gradients onto the tangent space of the unit
/// sphere, clip the global norm to `cfg.grad_clip`, update the moments with
/// bias correction at the warmup-scaled rate, then renormalize decoder rows.
/// The threshold is not touched.
pub fn adam_step<T: Scalar>(
    params: &mut SaeParams<T>,
    mut grads: SaeGrads<T>,
    opt: &mut OptState<T>,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Diverged {
            step: opt.t,
            reason: format!("non-finite gradient in {name}"),
        });
    }
    project_decoder_grads(params.w_dec.view(), &mut grads);
    let grad_norm = grads.global_norm();
    if cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip {
        grads.scale(T::from_f64_lossy(cfg.grad_clip / grad_norm));
    }

    let lr = warmup_lr(cfg, opt.t);
    let n = (opt.t + 1) as i32;
    let c = |v: f64| T::from_f64_lossy(v);
    let h = AdamScalars {
        beta1: c(cfg.beta1),
        beta2: c(cfg.beta2),
        one_minus_beta1: c(1.0 - cfg.beta1),
        one_minus_beta2: c(1.0 - cfg.beta2),
        bias1: c(1.0 - cfg.beta1.powi(n)),
        bias2: c(1.0 - cfg.beta2.powi(n)),
        lr: c(lr),
        eps: c(cfg.adam_eps),
    };
    adam_update(
        &mut params.w_enc,
        &grads.w_enc,
        &mut opt.m1.w_enc,
        &mut opt.m2.w_enc,
        &h,
    );
    adam_update(
        &mut params.b_enc,
        &grads.b_enc,
        &mut opt.m1.b_enc,
        &mut opt.m2.b_enc,
        &h,
    );
    adam_update(
        &mut params.w_dec,
        &grads.w_dec,
        &mut opt.m1.w_dec,
        &mut opt.m2.w_dec,
        &h,
    );
    adam_update(
        &mut params.b_dec,
        &grads.b_dec,
        &mut opt.m1.b_dec,
        &mut opt.m2.b_dec,
        &h,
    );
    params.normalize_decoder_rows();
    opt.t += 1;
    Ok(StepStats { grad_norm, lr })
}

/// Smallest strictly positive code in the batch.
pub fn min_selected<T: Scalar>(codes: ArrayView2<T>) -> Option<T> {
    codes
        .iter()
        .copied()
        .filter(|&v| v > T::zero())
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.min(v))))
}

/// Threshold EMA update for step `t`.
///
/// Returns the new `(theta, started)`. Nothing changes before
/// `threshold_start` or when the batch selected no codes; the first active
/// step sets `theta` directly to the smallest selected code.
pub fn update_threshold<T: Scalar>(
    theta: T,
    started: bool,
    codes: ArrayView2<T>,
    t: u64,
    cfg: &TrainConfig,
) -> (T, bool) {
    if t < cfg.threshold_start {
        return (theta, started);
    }
    let Some(a) = min_selected(codes) else {
        return (theta, started);
    };
    if !started {
        return (a, true);
    }
    if cfg.threshold_beta == 0.0 {
        return (a, true);
    }
    // θ + (1−β)(a − θ): a is an exact fixed point.
    let rate = T::from_f64_lossy(1.0 - cfg.threshold_beta);
    (theta + rate * (a - theta), true)
}

/// Marks every feature with a nonzero code in this batch as fired at step `t`.
pub fn update_dead_tracking<T: Scalar>(opt: &mut OptState<T>, codes: ArrayView2<T>, t: u64) {
    for row in codes.axis_iter(Axis(0)) {
        for (last, &v) in opt.last_fired.iter_mut().zip(row.iter()) {
            if v != T::zero() {
                *last = t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1, Array2};

    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    fn unit_params() -> SaeParams<f64> {
        let mut p = SaeParams::zeros(2, 3);
        p.w_dec = array![[1.0, 0.0], [0.6, 0.8], [0.0, -1.0]];
        p.w_enc = p.w_dec.clone();
        p.b_dec = array![0.3, -0.1];
        p
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = unit_params();
        let before = p.clone();
        let mut opt = OptState::new(2, 3);
        adam_step(&mut p, SaeGrads::zeros(2, 3), &mut opt, &cfg()).unwrap();
        assert!(p.max_decoder_norm_error() < 1e-12);
        for (a, b) in p.w_dec.iter().zip(before.w_dec.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(p.w_enc, before.w_enc);
        assert_eq!(p.b_dec, before.b_dec);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = unit_params();
        let mut opt = OptState::new(2, 3);
        let mut g = SaeGrads::zeros(2, 3);
        g.b_enc[1] = 0.25;
        let mut c = cfg();
        c.grad_clip = 0.0;
        let before = p.b_enc[1];
        let stats = adam_step(&mut p, g, &mut opt, &c).unwrap();
        let lr1 = c.lr / c.warmup_steps as f64;
        assert_eq!(stats.lr, lr1);
        let expected = lr1 * 0.25 / (0.25 + c.adam_eps);
        assert!(((before - p.b_enc[1]) - expected).abs() < 1e-18);
    }

    #[test]
    fn clipping_rescales_before_moments() {
        let mut p = unit_params();
        let mut opt = OptState::new(2, 3);
        let mut g = SaeGrads::zeros(2, 3);
        g.b_enc = Array1::from(vec![6.0, 8.0, 0.0]);
        let stats = adam_step(&mut p, g, &mut opt, &cfg()).unwrap();
        assert_eq!(stats.grad_norm, 10.0);
        // m1 = (1 − β1)·0.1·g
        assert!((opt.m1.b_enc[0] - 0.1 * 0.6).abs() < 1e-15);
        assert!((opt.m1.b_enc[1] - 0.1 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn decoder_gradient_projection_is_orthogonal() {
        let p = unit_params();
        let mut g = SaeGrads::zeros(2, 3);
        g.w_dec = array![[2.0, 1.0], [1.0, 1.0], [0.5, 3.0]];
        project_decoder_grads(p.w_dec.view(), &mut g);
        for (row, gr) in p.w_dec.rows().into_iter().zip(g.w_dec.rows()) {
            assert!(row.dot(&gr).abs() < 1e-15);
        }
        assert_eq!(g.w_dec.row(0), array![0.0, 1.0]);
    }

    #[test]
    fn non_finite_gradients_abort() {
        let mut p = unit_params();
        let mut opt = OptState::new(2, 3);
        let mut g = SaeGrads::zeros(2, 3);
        g.w_dec[[1, 1]] = f64::NAN;
        let err = adam_step(&mut p, g, &mut opt, &cfg()).unwrap_err();
        assert!(err.to_string().contains("w_dec"));
    }

    #[test]
    fn warmup_is_linear() {
        let c = cfg();
        assert_eq!(warmup_lr(&c, 0), c.lr / 1000.0);
        assert_eq!(warmup_lr(&c, 499), c.lr * 0.5);
        assert_eq!(warmup_lr(&c, 999), c.lr);
        assert_eq!(warmup_lr(&c, 5000), c.lr);
    }

    #[test]
    fn threshold_schedule() {
        let mut c = cfg();
        c.threshold_start = 10;
        let codes = array![[0.0_f64, 2.0], [3.0, 0.0]];
        assert_eq!(
            update_threshold(0.0, false, codes.view(), 9, &c),
            (0.0, false)
        );
        assert_eq!(
            update_threshold(0.0, false, codes.view(), 10, &c),
            (2.0, true)
        );
        let (theta, _) = update_threshold(1.0, true, codes.view(), 11, &c);
        assert!((theta - 1.001).abs() < 1e-12);
        let empty = Array2::<f64>::zeros((2, 2));
        assert_eq!(
            update_threshold(1.5, true, empty.view(), 11, &c),
            (1.5, true)
        );
        c.threshold_beta = 0.0;
        assert_eq!(
            update_threshold(7.0, true, codes.view(), 11, &c),
            (2.0, true)
        );
    }

    #[test]
    fn threshold_ema_reaches_fixed_point() {
        let mut c = cfg();
        c.threshold_start = 0;
        c.threshold_beta = 0.9;
        let codes = array![[0.3_f64, 0.0]];
        let (mut theta, mut started) = (0.0, false);
        for t in 0..2000 {
            (theta, started) = update_threshold(theta, started, codes.view(), t, &c);
        }
        assert_eq!(theta, 0.3);
        let mut theta = 3.0_f64;
        for t in 0..5000 {
            (theta, _) = update_threshold(theta, true, codes.view(), t, &c);
        }
        assert!((theta - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dead_tracking_windows() {
        let mut opt = OptState::<f64>::new(1, 3);
        let window = 1000;
        let fires = array![[1.0, 0.0, 0.0]];
        let silent = array![[0.0, 0.0, 0.0]];
        update_dead_tracking(&mut opt, fires.view(), 0);
        for t in 1..=1000 {
            assert_eq!(opt.dead_mask(t, window), vec![false; 3], "t={t}");
            update_dead_tracking(&mut opt, silent.view(), t);
        }
        assert_eq!(opt.dead_mask(1001, window), vec![true; 3]);

        let always = array![[0.0, 2.0, 0.0]];
        let mut opt = OptState::<f64>::new(1, 3);
        for t in 0..3000 {
            assert!(!opt.dead_mask(t, window)[1]);
            update_dead_tracking(&mut opt, always.view(), t);
        }
        assert!(opt.dead_mask(3000, window)[0]);
    }
}
