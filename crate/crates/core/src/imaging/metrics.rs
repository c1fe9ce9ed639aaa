//! Fidelity metrics on linear and tonemapped HDR images.

use super::radiometry::{mu_law_scalar, percentile};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported in place of infinity when two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    pred.expect_same_shape(gt, "mse")?;
    let n = pred.numel().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Tensor, gt: &Tensor, peak: f32) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?, peak as f64))
}

/// PSNR after dividing both images by the ground truth's 99th percentile,
/// clamping to [0, 1] and mu-law compressing. Not symmetric in its
/// arguments: the normaliser always comes from `gt`.
pub fn psnr_mu(pred: &Tensor, gt: &Tensor, mu: f32) -> Result<f64> {
    pred.expect_same_shape(gt, "psnr_mu")?;
    let p = percentile(gt, 99.0)? as f64;
    if !(p > 0.0) {
        return Err(Error::Degenerate(format!(
            "99th percentile of ground truth is {p}"
        )));
    }
    let mu = mu as f64;
    let tm = |v: f32| mu_law_scalar((v as f64 / p).clamp(0.0, 1.0), mu);
    let n = pred.numel().max(1) as f64;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| {
            let d = tm(*a) - tm(*b);
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse, 1.0))
}
