//! Finite-difference cases for every differentiable tape operation.
//!
//! Inputs are drawn so that no gradient entry is a sum of terms that can
//! cancel to near zero, and away from kinks and integer sample positions.
//! Linear operations use a wide step; smooth ones a narrow one.

use drhdr_core::autodiff::Var;
use drhdr_core::imaging::radiometry::TanhNorm;
use drhdr_core::ops::DeformParams;
use drhdr_core::train::loss::l1_tonemapped_with;
use drhdr_core::{Result, Shape, Tensor};
use rand::Rng;

use super::{conv_params, fd_check, rand_tensor, rng, weighted_sum};

pub type Case = (&'static str, fn(u64) -> Result<f64>);

fn signed_away_from_zero(shape: Shape, r: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let v: f32 = r.gen_range(0.2..2.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn unary(seed: u64, x: Tensor, eps: f64, op: fn(&mut drhdr_core::Tape, Var) -> Result<Var>) -> Result<f64> {
    fd_check(&[x], eps, |t, v| {
        let y = op(t, v[0])?;
        weighted_sum(t, y, seed)
    })
}

fn conv(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let p = conv_params(3, 4, 3, 1, 1, 1, true);
    let x = rand_tensor(Shape::new(1, 3, 6, 6), 0.1, 1.0, &mut r);
    let w = rand_tensor(p.weight_shape(), 0.1, 1.0, &mut r);
    let b = rand_tensor(p.bias_shape(), -0.5, 0.5, &mut r);
    fd_check(&[x, w, b], 0.1, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), &p)?;
        weighted_sum(t, y, seed)
    })
}

fn conv_strided(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let p = conv_params(2, 3, 3, 2, 2, 2, false);
    let x = rand_tensor(Shape::new(1, 2, 8, 8), 0.1, 1.0, &mut r);
    let w = rand_tensor(p.weight_shape(), 0.1, 1.0, &mut r);
    fd_check(&[x, w], 0.1, |t, v| {
        let y = t.conv2d(v[0], v[1], None, &p)?;
        weighted_sum(t, y, seed)
    })
}

/// Offsets sit strictly inside a sampling cell so the read is linear in
/// each offset coordinate over the whole step. The input is a ramp plus
/// noise, which keeps every bilinear slope well away from zero.
fn deform(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let p = DeformParams::new(conv_params(2, 1, 3, 1, 1, 1, true), 2);
    let (h, w) = (5, 5);
    let x = Tensor::from_fn(Shape::new(1, 2, h, w), |_, c, y, x| {
        0.1 + 0.3 * y as f32 + (0.17 + 0.05 * c as f32) * x as f32 + r.gen_range(0.0..0.05)
    });
    let off_shape = Shape::new(1, p.offset_channels(), h, w);
    let off = Tensor::new(
        off_shape,
        (0..off_shape.numel())
            .map(|_| r.gen_range(-1i32..=1) as f32 + r.gen_range(0.3f32..0.7))
            .collect(),
    )
    .unwrap();
    let mask = rand_tensor(Shape::new(1, p.mask_channels(), h, w), 0.5, 1.0, &mut r);
    let wt = rand_tensor(p.base.weight_shape(), 0.5, 1.0, &mut r);
    let b = rand_tensor(p.base.bias_shape(), -0.5, 0.5, &mut r);
    fd_check(&[x, off, mask, wt, b], 0.1, |t, v| {
        let y = t.deform_conv2d(v[0], v[1], v[2], v[3], Some(v[4]), &p)?;
        weighted_sum(t, y, seed)
    })
}

fn leaky(seed: u64) -> Result<f64> {
    let x = signed_away_from_zero(Shape::new(1, 4, 8, 8), &mut rng(seed));
    unary(seed, x, 0.1, |t, v| t.leaky_relu(v, 0.1))
}

fn relu(seed: u64) -> Result<f64> {
    // Negative entries have zero gradient on both routes.
    let x = signed_away_from_zero(Shape::new(1, 4, 8, 8), &mut rng(seed));
    unary(seed, x, 0.1, |t, v| t.relu(v))
}

fn abs(seed: u64) -> Result<f64> {
    let x = signed_away_from_zero(Shape::new(1, 4, 8, 8), &mut rng(seed));
    unary(seed, x, 0.1, |t, v| t.abs(v))
}

fn sigmoid(seed: u64) -> Result<f64> {
    let x = rand_tensor(Shape::new(1, 4, 8, 8), -2.0, 2.0, &mut rng(seed));
    unary(seed, x, 1e-2, |t, v| t.sigmoid(v))
}

fn tanh(seed: u64) -> Result<f64> {
    let x = rand_tensor(Shape::new(1, 4, 8, 8), -1.5, 1.5, &mut rng(seed));
    unary(seed, x, 1e-2, |t, v| t.tanh(v))
}

fn mu_law(seed: u64) -> Result<f64> {
    let x = rand_tensor(Shape::new(1, 4, 8, 8), 0.1, 0.6, &mut rng(seed));
    unary(seed, x, 2e-3, |t, v| t.mu_law(v, 5000.0))
}

fn scale(seed: u64) -> Result<f64> {
    let x = rand_tensor(Shape::new(1, 4, 8, 8), -1.0, 1.0, &mut rng(seed));
    unary(seed, x, 0.1, |t, v| t.scale(v, -1.75))
}

fn upsample(seed: u64) -> Result<f64> {
    let x = rand_tensor(Shape::new(1, 4, 4, 4), -1.0, 1.0, &mut rng(seed));
    unary(seed, x, 0.1, |t, v| t.upsample2x(v))
}

fn mean(seed: u64) -> Result<f64> {
    let x = rand_tensor(Shape::new(1, 4, 8, 8), -1.0, 1.0, &mut rng(seed));
    fd_check(&[x], 0.1, |t, v| t.mean(v[0]))
}

fn sum(seed: u64) -> Result<f64> {
    let x = rand_tensor(Shape::new(1, 4, 8, 8), -1.0, 1.0, &mut rng(seed));
    fd_check(&[x], 0.1, |t, v| t.sum(v[0]))
}

fn binary(seed: u64, eps: f64, op: fn(&mut drhdr_core::Tape, Var, Var) -> Result<Var>) -> Result<f64> {
    let mut r = rng(seed);
    let a = signed_away_from_zero(Shape::new(1, 4, 8, 8), &mut r);
    let b = signed_away_from_zero(Shape::new(1, 4, 8, 8), &mut r);
    fd_check(&[a, b], eps, |t, v| {
        let y = op(t, v[0], v[1])?;
        weighted_sum(t, y, seed)
    })
}

fn add(seed: u64) -> Result<f64> {
    binary(seed, 0.1, |t, a, b| t.add(a, b))
}

fn sub(seed: u64) -> Result<f64> {
    binary(seed, 0.1, |t, a, b| t.sub(a, b))
}

fn mul(seed: u64) -> Result<f64> {
    binary(seed, 0.1, |t, a, b| t.mul(a, b))
}

fn concat(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let a = rand_tensor(Shape::new(1, 1, 8, 8), -1.0, 1.0, &mut r);
    let b = rand_tensor(Shape::new(1, 3, 8, 8), -1.0, 1.0, &mut r);
    fd_check(&[a, b], 0.1, |t, v| {
        let y = t.concat(v)?;
        weighted_sum(t, y, seed)
    })
}

/// Tanh normalisation, mu-law and mean absolute difference, with the
/// normaliser held fixed as in training.
fn loss(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let pred = rand_tensor(Shape::new(1, 3, 4, 4), 0.1, 1.0, &mut r);
    let gt = pred.map(|v| v * 0.5);
    let norm = TanhNorm::from_prediction(&pred)?;
    fd_check(&[pred], 2e-3, |t, v| l1_tonemapped_with(t, v[0], &gt, norm, 5000.0))
}

pub const CASES: &[Case] = &[
    ("conv2d", conv),
    ("conv2d strided dilated", conv_strided),
    ("deform_conv2d", deform),
    ("leaky_relu", leaky),
    ("relu", relu),
    ("sigmoid", sigmoid),
    ("tanh", tanh),
    ("abs", abs),
    ("mu_law", mu_law),
    ("scale", scale),
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("concat", concat),
    ("upsample2x", upsample),
    ("sum", sum),
    ("mean", mean),
    ("tonemapped l1 loss", loss),
];

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
