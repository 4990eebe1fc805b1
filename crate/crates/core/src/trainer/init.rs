use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::sae::{GateConfig, SaeParams};
use crate::{Error, Result, Scalar};

pub const GEOMEDIAN_TOL: f64 = 1e-6;
pub const GEOMEDIAN_MAX_ITER: usize = 100;

/// Weiszfeld iteration for the geometric median, started at the mean.
///
/// Distances are floored at `1e-12` so that an iterate landing on a data
/// point stays well defined. Stops once a step moves less than `tol` or
/// after `max_iter` updates.
pub fn geometric_median<T: Scalar>(
    points: ArrayView2<T>,
    tol: f64,
    max_iter: usize,
) -> Result<Array1<T>> {
    if points.nrows() == 0 {
        return Err(Error::Empty("geometric median of zero points"));
    }
    let pts = points.mapv(|v| v.to_f64_lossless());
    let mut y = pts.mean_axis(Axis(0)).expect("nonempty");
    for _ in 0..max_iter {
        let mut num = Array1::<f64>::zeros(y.len());
        let mut den = 0.0;
        for p in pts.axis_iter(Axis(0)) {
            let dist = p
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            let w = 1.0 / dist;
            num.scaled_add(w, &p);
            den += w;
        }
        let next = num / den;
        let step = (&next - &y).mapv(|v| v * v).sum().sqrt();
        y = next;
        if step < tol {
            break;
        }
    }
    Ok(y.mapv(T::from_f64_lossy))
}

/// Fresh parameters: Gaussian unit-norm decoder rows, encoder tied to the
/// decoder, zero encoder bias, decoder bias at the geometric median of
/// `first_batch`, threshold zero.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    first_batch: ArrayView2<T>,
    cfg: &GateConfig,
    rng: &mut R,
) -> Result<SaeParams<T>> {
    cfg.validate()?;
    if first_batch.ncols() != cfg.d {
        return Err(Error::dims(
            "first batch columns",
            cfg.d,
            first_batch.ncols(),
        ));
    }
    let mut w_dec = Array2::<T>::zeros((cfg.m, cfg.d));
    w_dec.mapv_inplace(|_| {
        let g: f64 = StandardNormal.sample(rng);
        T::from_f64_lossy(g)
    });
    let mut params = SaeParams {
        w_enc: Array2::zeros((cfg.m, cfg.d)),
        b_enc: Array1::zeros(cfg.m),
        w_dec,
        b_dec: geometric_median(first_batch, GEOMEDIAN_TOL, GEOMEDIAN_MAX_ITER)?,
        theta: T::zero(),
    };
    params.normalize_decoder_rows();
    params.w_enc.assign(&params.w_dec);
    Ok(params)
}
