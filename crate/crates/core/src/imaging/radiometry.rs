//! Exposure alignment, mu-law compression and percentile normalisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f32 = 2.2;
pub const DEFAULT_MU: f32 = 5000.0;

/// Above this many values percentiles are taken from a fixed random subsample.
pub const PERCENTILE_SAMPLE: usize = 1 << 20;

/// `ldr^gamma / t`: maps a bracket into linear radiance shared across exposures.
pub fn gamma_adjust(ldr: &Tensor, t: f32, gamma: f32) -> Result<Tensor> {
    if !(t > 0.0) {
        return Err(Error::Degenerate(format!("exposure time {t} must be positive")));
    }
    let inv_t = 1.0 / t as f64;
    Ok(ldr.map(|v| ((v.max(0.0) as f64).powf(gamma as f64) * inv_t) as f32))
}

/// Inverse of [`gamma_adjust`] on unsaturated values: `(h * t)^(1/gamma)`.
pub fn gamma_inverse(hdr: &Tensor, t: f32, gamma: f32) -> Result<Tensor> {
    if !(t > 0.0) {
        return Err(Error::Degenerate(format!("exposure time {t} must be positive")));
    }
    Ok(hdr.map(|v| ((v.max(0.0) as f64 * t as f64).powf(1.0 / gamma as f64)) as f32))
}

#[inline]
pub fn mu_law_scalar(x: f64, mu: f64) -> f64 {
    (mu * x).ln_1p() / mu.ln_1p()
}

pub fn mu_law(x: &Tensor, mu: f32) -> Result<Tensor> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu-law parameter {mu} must be positive")));
    }
    if let Some(v) = x.data().iter().find(|v| **v < 0.0) {
        return Err(Error::Degenerate(format!("mu-law input {v} is negative")));
    }
    let mu = mu as f64;
    Ok(x.map(|v| mu_law_scalar(v as f64, mu) as f32))
}

/// `g * mu / ((1 + mu x) ln(1 + mu))`.
pub fn mu_law_grad(x: &Tensor, g: &Tensor, mu: f32) -> Result<Tensor> {
    let mu = mu as f64;
    let denom = mu.ln_1p();
    x.zip_map(g, |x, g| (g as f64 * mu / ((1.0 + mu * x as f64) * denom)) as f32)
}

/// Linear-interpolated percentile (`q` in [0, 100]) of all values, matching
/// the common "linear" definition: rank `q/100 * (n - 1)` between sorted
/// neighbours.
pub fn percentile(x: &Tensor, q: f64) -> Result<f32> {
    percentile_of(x.data(), q)
}

pub fn percentile_of(values: &[f32], q: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of an empty tensor".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("percentile {q} outside [0, 100]")));
    }
    let mut buf: Vec<f32> = if values.len() > PERCENTILE_SAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(values.len() as u64);
        (0..PERCENTILE_SAMPLE)
            .map(|_| values[rng.gen_range(0..values.len())])
            .collect()
    } else {
        values.to_vec()
    };
    if buf.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            context: "percentile".into(),
        });
    }
    let rank = q / 100.0 * (buf.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut a, upper) = buf.select_nth_unstable_by(lo, f32::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return Ok(a);
    }
    let b = upper.iter().copied().fold(f32::INFINITY, f32::min);
    Ok((a as f64 + frac * (b as f64 - a as f64)) as f32)
}

/// `x -> tanh(x / p)` with `p` the 99th percentile of a prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TanhNorm {
    pub p: f32,
}

impl TanhNorm {
    pub fn from_prediction(pred: &Tensor) -> Result<Self> {
        let p = percentile(pred, 99.0)?;
        if !(p > 0.0) {
            return Err(Error::Degenerate(format!(
                "99th percentile of prediction is {p}; cannot normalise"
            )));
        }
        Ok(TanhNorm { p })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let inv = 1.0 / self.p as f64;
        x.map(|v| (v as f64 * inv).tanh() as f32)
    }
}
