//! L1 distance between tonemapped prediction and ground truth.
//!
//! Both images are squashed with `tanh(x / p)`, `p` the 99th percentile of
//! the prediction, then mu-law compressed. `p` is a constant for
//! differentiation.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::imaging::radiometry::{mu_law, mu_law_scalar, TanhNorm};
use crate::tensor::Tensor;

/// Records the loss on `tape` with a given normaliser.
pub fn l1_tonemapped_with(tape: &mut Tape, pred: Var, gt: &Tensor, norm: TanhNorm, mu: f32) -> Result<Var> {
    let target = mu_law(&norm.apply(gt), mu)?;
    let target = tape.constant(target);
    let x = tape.scale(pred, 1.0 / norm.p)?;
    let x = tape.tanh(x)?;
    let x = tape.mu_law(x, mu)?;
    let d = tape.sub(x, target)?;
    let d = tape.abs(d)?;
    tape.mean(d)
}

/// Records the loss on `tape`, taking the normaliser from the current
/// prediction.
pub fn l1_tonemapped_loss(tape: &mut Tape, pred: Var, gt: &Tensor, mu: f32) -> Result<(Var, TanhNorm)> {
    let norm = TanhNorm::from_prediction(tape.value(pred)?)?;
    Ok((l1_tonemapped_with(tape, pred, gt, norm, mu)?, norm))
}

/// Loss value without a tape, evaluated in `f64`.
pub fn l1_tonemapped_value(pred: &Tensor, gt: &Tensor, mu: f32) -> Result<f64> {
    pred.expect_same_shape(gt, "loss")?;
    let p = TanhNorm::from_prediction(pred)?.p as f64;
    let mu = mu as f64;
    let tm = |v: f32| mu_law_scalar((v as f64 / p).tanh(), mu);
    let n = pred.numel().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (tm(*a) - tm(*b)).abs())
        .sum::<f64>()
        / n)
}
