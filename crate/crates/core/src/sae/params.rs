use ndarray::{Array1, Array2, Axis};

use crate::sae::GateConfig;
use crate::{Error, Result, Scalar};

/// Learnable state of a Sampled-SAE.
///
/// Both weight matrices are stored feature-major (`m × d`): row `j` of
/// `w_enc` reads feature `j` out of the centered input and row `j` of
/// `w_dec` is the dictionary atom feature `j` writes back.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams<T> {
    pub w_enc: Array2<T>,
    pub b_enc: Array1<T>,
    /// Unit-norm dictionary atoms.
    pub w_dec: Array2<T>,
    pub b_dec: Array1<T>,
    /// Inference-time activation threshold.
    pub theta: T,
}

impl<T: Scalar> SaeParams<T> {
    pub fn zeros(d: usize, m: usize) -> Self {
        SaeParams {
            w_enc: Array2::zeros((m, d)),
            b_enc: Array1::zeros(m),
            w_dec: Array2::zeros((m, d)),
            b_dec: Array1::zeros(d),
            theta: T::zero(),
        }
    }

    pub fn d(&self) -> usize {
        self.b_dec.len()
    }

    pub fn m(&self) -> usize {
        self.b_enc.len()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (m, d) = (self.m(), self.d());
        if self.w_enc.dim() != (m, d) {
            return Err(Error::dims("w_enc", (m, d), self.w_enc.dim()));
        }
        if self.w_dec.dim() != (m, d) {
            return Err(Error::dims("w_dec", (m, d), self.w_dec.dim()));
        }
        Ok(())
    }

    pub fn check_config(&self, cfg: &GateConfig) -> Result<()> {
        self.check_shapes()?;
        if self.d() != cfg.d || self.m() != cfg.m {
            return Err(Error::dims(
                "params vs config",
                (cfg.m, cfg.d),
                (self.m(), self.d()),
            ));
        }
        Ok(())
    }

    /// Rescales every decoder row to unit Euclidean norm. Zero rows are left alone.
    pub fn normalize_decoder_rows(&mut self) {
        for mut row in self.w_dec.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            if norm > T::zero() {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }

    /// Largest deviation of a decoder row norm from 1.
    pub fn max_decoder_norm_error(&self) -> f64 {
        self.w_dec
            .axis_iter(Axis(0))
            .map(|row| {
                let n2: f64 = row.iter().map(|v| v.to_f64_lossless().powi(2)).sum();
                (n2.sqrt() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.w_enc.iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite())
            && self.w_dec.iter().all(|v| v.is_finite())
            && self.b_dec.iter().all(|v| v.is_finite())
            && self.theta.is_finite()
    }

    /// Cheap content hash used to detect traces computed with other parameters.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: T| {
            h ^= v.to_f64_lossless().to_bits();
            h = h.wrapping_mul(PRIME);
        };
        self.w_enc.iter().for_each(|&v| feed(v));
        self.b_enc.iter().for_each(|&v| feed(v));
        self.w_dec.iter().for_each(|&v| feed(v));
        self.b_dec.iter().for_each(|&v| feed(v));
        feed(self.theta);
        h
    }

    /// Converts the element type, e.g. to run a gradient check in `f64`.
    pub fn cast<U: Scalar>(&self) -> SaeParams<U> {
        let c = |v: &T| U::from_f64_lossy(v.to_f64_lossless());
        SaeParams {
            w_enc: self.w_enc.map(c),
            b_enc: self.b_enc.map(c),
            w_dec: self.w_dec.map(c),
            b_dec: self.b_dec.map(c),
            theta: U::from_f64_lossy(self.theta.to_f64_lossless()),
        }
    }
}
