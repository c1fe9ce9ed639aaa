//! Reference implementations and fixtures shared by the integration tests
//! and the acceptance harness. Nothing here calls the kernels it checks.

#![allow(dead_code)]

use drhdr_core::autodiff::{Tape, Var};
use drhdr_core::graph::{GraphSpec, Init, InputSpec, LayerKind, LayerSpec, Resolution, WeightSpec};
use drhdr_core::ops::{ConvParams, DeformParams};
use drhdr_core::{Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: Shape, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn conv_params(cin: usize, cout: usize, k: usize, stride: usize, dil: usize, pad: usize, bias: bool) -> ConvParams {
    ConvParams {
        in_channels: cin,
        out_channels: cout,
        kernel: (k, k),
        stride: (stride, stride),
        dilation: (dil, dil),
        padding: (pad, pad),
        has_bias: bias,
    }
}

fn out_len(len: usize, k: usize, s: usize, d: usize, p: usize) -> Option<usize> {
    let span = d * (k - 1) + 1;
    (len + 2 * p >= span).then(|| (len + 2 * p - span) / s + 1)
}

/// Direct nested-loop convolution accumulated in `f64`.
pub fn brute_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: &ConvParams) -> Option<Tensor> {
    let xs = x.shape();
    let (k, s, d, pad) = (p.kernel.0, p.stride.0, p.dilation.0, p.padding.0 as isize);
    let oh = out_len(xs.h, k, s, d, p.padding.0)?;
    let ow = out_len(xs.w, k, s, d, p.padding.0)?;
    let mut out = Tensor::zeros(Shape::new(xs.n, p.out_channels, oh, ow));
    for n in 0..xs.n {
        for o in 0..p.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o] as f64);
                    for c in 0..p.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky * d) as isize - pad;
                                let ix = (ox * s + kx * d) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(o, c, ky, kx) as f64 * x.at(n, c, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                    out.set(n, o, oy, ox, acc as f32);
                }
            }
        }
    }
    Some(out)
}

/// Bilinear read with zero outside the plane, corner by corner.
pub fn bilinear(x: &Tensor, n: usize, c: usize, y: f64, xx: f64) -> f64 {
    let s = x.shape();
    let (y0, x0) = (y.floor(), xx.floor());
    let (fy, fx) = (y - y0, xx - x0);
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (cy, cx) = (y0 + dy, x0 + dx);
            if cy >= 0.0 && cx >= 0.0 && cy < s.h as f64 && cx < s.w as f64 {
                acc += wy * wx * x.at(n, c, cy as usize, cx as usize) as f64;
            }
        }
    }
    acc
}

/// Modulated deformable convolution by direct summation.
pub fn brute_deform(x: &Tensor, off: &Tensor, mask: &Tensor, w: &Tensor, b: Option<&Tensor>, p: &DeformParams) -> Tensor {
    let xs = x.shape();
    let bp = &p.base;
    let (k, s, d, pad) = (bp.kernel.0, bp.stride.0, bp.dilation.0, bp.padding.0 as f64);
    let oh = out_len(xs.h, k, s, d, bp.padding.0).unwrap();
    let ow = out_len(xs.w, k, s, d, bp.padding.0).unwrap();
    let taps = k * k;
    let per_group = bp.in_channels / p.groups;
    let mut out = Tensor::zeros(Shape::new(xs.n, bp.out_channels, oh, ow));
    for n in 0..xs.n {
        for o in 0..bp.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o] as f64);
                    for c in 0..bp.in_channels {
                        let g = c / per_group;
                        for ky in 0..k {
                            for kx in 0..k {
                                let t = ky * k + kx;
                                let dy = off.at(n, 2 * (g * taps + t), oy, ox) as f64;
                                let dx = off.at(n, 2 * (g * taps + t) + 1, oy, ox) as f64;
                                let m = mask.at(n, g * taps + t, oy, ox) as f64;
                                let y = (oy * s + ky * d) as f64 - pad + dy;
                                let xx = (ox * s + kx * d) as f64 - pad + dx;
                                acc += w.at(o, c, ky, kx) as f64 * m * bilinear(x, n, c, y, xx);
                            }
                        }
                    }
                    out.set(n, o, oy, ox, acc as f32);
                }
            }
        }
    }
    out
}

/// Central finite differences against tape gradients for every input.
///
/// Returns the largest `|a - n| / max(|a|, |n|, 1e-8)`. Perturbations are
/// made in `f32`; the step actually taken is used as the divisor.
pub fn fd_check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap().cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vs: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vs)?;
        tape.scalar(out)
    };
    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            let hi = (orig as f64 + eps) as f32;
            let lo = (orig as f64 - eps) as f32;
            probe[i].data_mut()[j] = hi;
            let fh = eval(&probe)?;
            probe[i].data_mut()[j] = lo;
            let fl = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (fh - fl) / (hi as f64 - lo as f64);
            let a = analytic[i].data()[j] as f64;
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

/// `sum(c * y)` with a fixed positive weight per element, so that no
/// gradient entry vanishes by symmetry.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let s = tape.shape(y)?;
    let mut r = rng(seed ^ 0xC0FFEE);
    let c = tape.constant(rand_tensor(s, 0.5, 1.5, &mut r));
    let p = tape.mul(y, c)?;
    tape.sum(p)
}

pub fn mu_law(x: f64, mu: f64) -> f64 {
    (1.0 + mu * x).ln() / (1.0 + mu).ln()
}

/// Linear-interpolation percentile by full sort.
pub fn percentile(values: &[f32], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

pub fn psnr_mu(pred: &[f32], gt: &[f32], mu: f64) -> f64 {
    let p = percentile(gt, 99.0);
    let tm = |v: f32| mu_law((v as f64 / p).clamp(0.0, 1.0), mu);
    let mse = pred.iter().zip(gt).map(|(a, b)| (tm(*a) - tm(*b)).powi(2)).sum::<f64>() / pred.len() as f64;
    10.0 * (1.0 / mse).log10()
}

fn conv_layer(name: &str, input: &str, p: ConvParams, res: Resolution) -> (LayerSpec, Vec<WeightSpec>) {
    let mut ws = vec![WeightSpec {
        name: format!("{name}.w"),
        shape: p.weight_shape(),
        init: Init::HeUniform,
    }];
    if p.has_bias {
        ws.push(WeightSpec {
            name: format!("{name}.b"),
            shape: p.bias_shape(),
            init: Init::Zeros,
        });
    }
    let layer = LayerSpec {
        name: name.into(),
        kind: LayerKind::Conv {
            params: p,
            weight: format!("{name}.w"),
            bias: p.has_bias.then(|| format!("{name}.b")),
        },
        inputs: vec![input.into()],
        resolution: res,
    };
    (layer, ws)
}

/// One 3x3 convolution, 6 -> 42 channels with bias.
pub fn single_conv_graph() -> GraphSpec {
    let (l, w) = conv_layer("c1", "x", conv_params(6, 42, 3, 1, 1, 1, true), Resolution::Full);
    GraphSpec {
        name: "single-conv".into(),
        inputs: vec![InputSpec { name: "x".into(), channels: 6 }],
        weights: w,
        layers: vec![l],
        output: "c1".into(),
    }
}

/// The single convolution followed by a stride-2 3x3, 42 -> 42.
pub fn conv_stride2_graph() -> GraphSpec {
    let mut g = single_conv_graph();
    let (l, w) = conv_layer("c2", "c1", conv_params(42, 42, 3, 2, 1, 1, true), Resolution::Quarter);
    g.name = "conv-stride2".into();
    g.weights.extend(w);
    g.layers.push(l);
    g.output = "c2".into();
    g
}

/// Hand count for a dense block: `depth` 3x3 layers of `growth` outputs over
/// `ch + growth * l` inputs, a 1x1 fusion back to `ch`, all with bias.
pub fn drdb_params(ch: u64, growth: u64, depth: u64) -> u64 {
    let mut p = 0;
    for l in 0..depth {
        p += 9 * growth * (ch + growth * l) + growth;
    }
    p + (ch + growth * depth) * ch + ch
}

/// Kernel products of the same block per output pixel.
pub fn drdb_kernel_macs_per_pixel(ch: u64, growth: u64, depth: u64) -> u64 {
    let mut m = 0;
    for l in 0..depth {
        m += 9 * growth * (ch + growth * l);
    }
    m + (ch + growth * depth) * ch
}

pub mod grads;
