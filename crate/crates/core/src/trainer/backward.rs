use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::sae::{center, ForwardTrace, GateConfig, SaeParams};
use crate::{Error, Result, Scalar};

/// Gradients (or Adam moments) shaped like the trainable part of [`SaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads<T> {
    pub w_enc: Array2<T>,
    pub b_enc: Array1<T>,
    pub w_dec: Array2<T>,
    pub b_dec: Array1<T>,
}

impl<T: Scalar> SaeGrads<T> {
    pub fn zeros(d: usize, m: usize) -> Self {
        SaeGrads {
            w_enc: Array2::zeros((m, d)),
            b_enc: Array1::zeros(m),
            w_dec: Array2::zeros((m, d)),
            b_dec: Array1::zeros(d),
        }
    }

    pub fn global_norm(&self) -> f64 {
        let sq = |s: &mut f64, v: &T| {
            let v = v.to_f64_lossless();
            *s += v * v;
        };
        let mut s = 0.0;
        self.w_enc.iter().for_each(|v| sq(&mut s, v));
        self.b_enc.iter().for_each(|v| sq(&mut s, v));
        self.w_dec.iter().for_each(|v| sq(&mut s, v));
        self.b_dec.iter().for_each(|v| sq(&mut s, v));
        s.sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        self.w_enc.mapv_inplace(|v| v * factor);
        self.b_enc.mapv_inplace(|v| v * factor);
        self.w_dec.mapv_inplace(|v| v * factor);
        self.b_dec.mapv_inplace(|v| v * factor);
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let finite = |v: &T| v.is_finite();
        if !self.w_enc.iter().all(finite) {
            Some("w_enc")
        } else if !self.b_enc.iter().all(finite) {
            Some("b_enc")
        } else if !self.w_dec.iter().all(finite) {
            Some("w_dec")
        } else if !self.b_dec.iter().all(finite) {
            Some("b_dec")
        } else {
            None
        }
    }
}

/// Keeps `grad` only where `support` is nonzero.
fn masked<T: Scalar>(mut grad: Array2<T>, support: ArrayView2<T>) -> Array2<T> {
    Zip::from(&mut grad).and(support).for_each(|g, &s| {
        if s == T::zero() {
            *g = T::zero();
        }
    });
    grad
}

/// Gradient of the training loss with the selection frozen.
///
/// The pool, the BatchTopK support and the auxiliary support are treated as
/// constants, so gradient reaches a preactivation only where it was kept
/// (and hence positive). The auxiliary target `X − X̂` is a constant.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    x: ArrayView2<T>,
    params: &SaeParams<T>,
    cfg: &GateConfig,
) -> Result<SaeGrads<T>> {
    if !trace.is_fresh_for(params) {
        return Err(Error::Contract(
            "forward trace was computed with different parameters".into(),
        ));
    }
    if x.dim() != trace.x_hat.dim() {
        return Err(Error::dims("backward input", trace.x_hat.dim(), x.dim()));
    }
    let b = x.nrows().max(1) as f64;
    let two_over_b = T::from_f64_lossy(2.0 / b);

    // d/dX̂ of ‖X − X̂‖²/B
    let g = (&trace.x_hat - &x) * two_over_b;
    let mut w_dec = trace.codes.t().dot(&g);
    let mut b_dec = g.sum_axis(Axis(0));
    let mut dp = masked(g.dot(&params.w_dec.t()), trace.codes.view());

    if let Some(aux) = trace.aux.as_ref().filter(|_| cfg.alpha > 0.0) {
        let ga = (&aux.recon - &aux.residual) * T::from_f64_lossy(2.0 * cfg.alpha / b);
        w_dec += &aux.codes.t().dot(&ga);
        dp += &masked(ga.dot(&params.w_dec.t()), aux.codes.view());
    }

    let xc = center(x, params);
    let w_enc = dp.t().dot(&xc);
    let b_enc = dp.sum_axis(Axis(0));
    b_dec -= &b_enc.dot(&params.w_enc);

    Ok(SaeGrads {
        w_enc,
        b_enc,
        w_dec,
        b_dec,
    })
}
