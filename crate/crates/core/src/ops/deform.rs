//! Modulated deformable convolution.
//!
//! Each kernel tap of each output pixel reads the input at its regular grid
//! position displaced by a learned fractional offset, interpolated
//! bilinearly and scaled by a learned mask value in (0, 1). Offsets are laid
//! out as `(dy, dx)` channel pairs per group and tap, `2 * (g * taps + k)`
//! for `dy` and the next channel for `dx`; the mask has one channel per group
//! and tap. Samples outside the image read zero.

use serde::{Deserialize, Serialize};

use super::conv::{self, ConvParams};
use super::gemm::{self, TILE};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeformParams {
    pub base: ConvParams,
    pub groups: usize,
}

impl DeformParams {
    pub fn new(base: ConvParams, groups: usize) -> Self {
        DeformParams { base, groups }
    }

    pub fn offset_channels(&self) -> usize {
        2 * self.base.taps() * self.groups
    }

    pub fn mask_channels(&self) -> usize {
        self.base.taps() * self.groups
    }
}

#[derive(Debug, Default)]
pub struct DeformGrads {
    pub input: Option<Tensor>,
    pub offsets: Option<Tensor>,
    pub mask: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Bilinear read of `plane` (h x w) at fractional `(y, x)`; corners outside
/// the plane contribute zero.
pub fn bilinear_sample(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let s = Sample::new(h, w, y, x);
    s.value(plane)
}

/// Integer corner and interpolation weights of one sample position.
struct Sample {
    inside: bool,
    y0: isize,
    x0: isize,
    ly: f64,
    lx: f64,
    h: isize,
    w: isize,
}

impl Sample {
    #[inline]
    fn new(h: usize, w: usize, y: f64, x: f64) -> Self {
        let (hi, wi) = (h as isize, w as isize);
        let inside = y > -1.0 && y < h as f64 && x > -1.0 && x < w as f64;
        let (yf, xf) = (y.floor(), x.floor());
        Sample {
            inside,
            y0: yf as isize,
            x0: xf as isize,
            ly: y - yf,
            lx: x - xf,
            h: hi,
            w: wi,
        }
    }

    #[inline]
    fn corner(&self, plane: &[f32], dy: isize, dx: isize) -> f64 {
        let (y, x) = (self.y0 + dy, self.x0 + dx);
        if y >= 0 && y < self.h && x >= 0 && x < self.w {
            plane[(y * self.w + x) as usize] as f64
        } else {
            0.0
        }
    }

    #[inline]
    fn corners(&self, plane: &[f32]) -> [f64; 4] {
        [
            self.corner(plane, 0, 0),
            self.corner(plane, 0, 1),
            self.corner(plane, 1, 0),
            self.corner(plane, 1, 1),
        ]
    }

    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (hy, hx) = (1.0 - self.ly, 1.0 - self.lx);
        [hy * hx, hy * self.lx, self.ly * hx, self.ly * self.lx]
    }

    #[inline]
    fn value(&self, plane: &[f32]) -> f64 {
        if !self.inside {
            return 0.0;
        }
        let v = self.corners(plane);
        let wts = self.weights();
        wts[0] * v[0] + wts[1] * v[1] + wts[2] * v[2] + wts[3] * v[3]
    }

    /// (value, d value / dy, d value / dx). At integer coordinates the
    /// derivative of the cell above/right of the point is used.
    #[inline]
    fn value_and_grad(&self, plane: &[f32]) -> (f64, f64, f64) {
        if !self.inside {
            return (0.0, 0.0, 0.0);
        }
        let v = self.corners(plane);
        let wts = self.weights();
        let (hy, hx) = (1.0 - self.ly, 1.0 - self.lx);
        let val = wts[0] * v[0] + wts[1] * v[1] + wts[2] * v[2] + wts[3] * v[3];
        let gy = hx * (v[2] - v[0]) + self.lx * (v[3] - v[1]);
        let gx = hy * (v[1] - v[0]) + self.ly * (v[3] - v[2]);
        (val, gy, gx)
    }

    /// Scatter `g` into the four corners of `acc` with interpolation weights.
    #[inline]
    fn scatter(&self, acc: &mut [f64], g: f64) {
        if !self.inside {
            return;
        }
        let wts = self.weights();
        for (i, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let (y, x) = (self.y0 + dy, self.x0 + dx);
            if y >= 0 && y < self.h && x >= 0 && x < self.w {
                acc[(y * self.w + x) as usize] += g * wts[i];
            }
        }
    }
}

fn check_deform(
    x: &Tensor,
    offsets: &Tensor,
    mask: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: &DeformParams,
) -> Result<(usize, usize)> {
    let (oh, ow) = conv::check_conv(x, w, b, &p.base)?;
    if p.groups == 0 || p.base.in_channels % p.groups != 0 {
        return Err(Error::shape(
            "deform_conv2d",
            format!(
                "{} input channels not divisible into {} groups",
                p.base.in_channels, p.groups
            ),
        ));
    }
    let n = x.shape().n;
    let want_off = Shape::new(n, p.offset_channels(), oh, ow);
    let want_mask = Shape::new(n, p.mask_channels(), oh, ow);
    if offsets.shape() != want_off {
        return Err(Error::shape(
            "deform_conv2d",
            format!("offsets {} expected {want_off}", offsets.shape()),
        ));
    }
    if mask.shape() != want_mask {
        return Err(Error::shape(
            "deform_conv2d",
            format!("mask {} expected {want_mask}", mask.shape()),
        ));
    }
    Ok((oh, ow))
}

struct ItemViews<'a> {
    x: &'a [f32],
    offsets: &'a [f32],
    mask: &'a [f32],
}

/// Visits every (input channel, tap, tile pixel) of a tile together with its
/// sample geometry and mask value.
fn for_each_sample(
    v: &ItemViews<'_>,
    h: usize,
    w: usize,
    p: &DeformParams,
    ow: usize,
    npix: usize,
    start: usize,
    t: usize,
    mut f: impl FnMut(usize, usize, usize, usize, &Sample, f64),
) {
    let (kh, kw) = p.base.kernel;
    let (sh, sw) = p.base.stride;
    let (dh, dw) = p.base.dilation;
    let (ph, pw) = p.base.padding;
    let taps = kh * kw;
    let cpg = p.base.in_channels / p.groups;
    for c in 0..p.base.in_channels {
        let g = c / cpg;
        for ky in 0..kh {
            for kx in 0..kw {
                let k = ky * kw + kx;
                let dy_ch = 2 * (g * taps + k);
                let dys = &v.offsets[dy_ch * npix..(dy_ch + 1) * npix];
                let dxs = &v.offsets[(dy_ch + 1) * npix..(dy_ch + 2) * npix];
                let ms = &v.mask[(g * taps + k) * npix..(g * taps + k + 1) * npix];
                let (mut oy, mut ox) = (start / ow, start % ow);
                for j in 0..t {
                    let pix = start + j;
                    let y = (oy * sh + ky * dh) as f64 - ph as f64 + dys[pix] as f64;
                    let xx = (ox * sw + kx * dw) as f64 - pw as f64 + dxs[pix] as f64;
                    let s = Sample::new(h, w, y, xx);
                    f(c, g * taps + k, k, j, &s, ms[pix] as f64);
                    ox += 1;
                    if ox == ow {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

fn deform_col_tile(
    v: &ItemViews<'_>,
    h: usize,
    w: usize,
    p: &DeformParams,
    ow: usize,
    npix: usize,
    start: usize,
    t: usize,
    col: &mut [f32],
) {
    let taps = p.base.taps();
    let plane = h * w;
    for_each_sample(v, h, w, p, ow, npix, start, t, |c, _gk, k, j, s, m| {
        let src = &v.x[c * plane..(c + 1) * plane];
        col[(c * taps + k) * t + j] = (m * s.value(src)) as f32;
    });
}

pub fn deform_conv2d(
    x: &Tensor,
    offsets: &Tensor,
    mask: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: &DeformParams,
) -> Result<Tensor> {
    let (oh, ow) = check_deform(x, offsets, mask, w, b, p)?;
    let xs = x.shape();
    let cout = p.base.out_channels;
    let k = p.base.in_channels * p.base.taps();
    let npix = oh * ow;
    let mut out = Tensor::zeros(Shape::new(xs.n, cout, oh, ow));
    let mut col = vec![0f32; k * TILE.min(npix)];
    for n in 0..xs.n {
        let views = item_views(x, offsets, mask, n);
        let out_item = &mut out.data_mut()[n * cout * npix..(n + 1) * cout * npix];
        for start in (0..npix).step_by(TILE) {
            let t = TILE.min(npix - start);
            let col = &mut col[..k * t];
            deform_col_tile(&views, xs.h, xs.w, p, ow, npix, start, t, col);
            gemm::forward_tile(w.data(), b.map(|b| b.data()), k, col, t, out_item, npix, start);
        }
    }
    Ok(out)
}

fn item_views<'a>(x: &'a Tensor, offsets: &'a Tensor, mask: &'a Tensor, n: usize) -> ItemViews<'a> {
    let slice = |t: &'a Tensor| {
        let len = t.shape().c * t.shape().plane();
        &t.data()[n * len..(n + 1) * len]
    };
    ItemViews {
        x: slice(x),
        offsets: slice(offsets),
        mask: slice(mask),
    }
}

/// `need` selects (input, offsets, mask, weight, bias).
pub fn deform_conv2d_backward(
    x: &Tensor,
    offsets: &Tensor,
    mask: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    p: &DeformParams,
    need: [bool; 5],
) -> Result<DeformGrads> {
    let bias_stub = p
        .base
        .has_bias
        .then(|| Tensor::zeros(p.base.bias_shape()));
    let (oh, ow) = check_deform(x, offsets, mask, w, bias_stub.as_ref(), p)?;
    let xs = x.shape();
    let cout = p.base.out_channels;
    let taps = p.base.taps();
    let k = p.base.in_channels * taps;
    let npix = oh * ow;
    if gout.shape() != Shape::new(xs.n, cout, oh, ow) {
        return Err(Error::shape(
            "deform_conv2d backward",
            format!("gradient {}", gout.shape()),
        ));
    }
    let need_col_grad = need[0] || need[1] || need[2];
    let plane = xs.plane();
    let mut gw = vec![0f64; cout * k];
    let mut gx = vec![0f64; if need[0] { x.numel() } else { 0 }];
    let mut goff = vec![0f64; if need[1] { offsets.numel() } else { 0 }];
    let mut gmask = vec![0f64; if need[2] { mask.numel() } else { 0 }];
    let mut col = vec![0f32; k * TILE.min(npix)];
    let mut gcol = vec![0f64; if need_col_grad { k * TILE.min(npix) } else { 0 }];
    let off_item = p.offset_channels() * npix;
    let mask_item = p.mask_channels() * npix;
    for n in 0..xs.n {
        let views = item_views(x, offsets, mask, n);
        let g_item = &gout.data()[n * cout * npix..(n + 1) * cout * npix];
        for start in (0..npix).step_by(TILE) {
            let t = TILE.min(npix - start);
            if need[3] {
                let col = &mut col[..k * t];
                deform_col_tile(&views, xs.h, xs.w, p, ow, npix, start, t, col);
                gemm::weight_grad_tile(g_item, npix, start, col, t, k, &mut gw);
            }
            if !need_col_grad {
                continue;
            }
            let gcol = &mut gcol[..k * t];
            gemm::col_grad_tile(w.data(), cout, k, g_item, npix, start, t, gcol);
            for_each_sample(&views, xs.h, xs.w, p, ow, npix, start, t, |c, gk, kt, j, s, m| {
                let gc = gcol[(c * taps + kt) * t + j];
                if gc == 0.0 {
                    return;
                }
                let pix = start + j;
                let src = &views.x[c * plane..(c + 1) * plane];
                let (val, dvy, dvx) = s.value_and_grad(src);
                if need[2] {
                    gmask[n * mask_item + gk * npix + pix] += gc * val;
                }
                let coef = gc * m;
                if need[1] {
                    let base = n * off_item + 2 * gk * npix + pix;
                    goff[base] += coef * dvy;
                    goff[base + npix] += coef * dvx;
                }
                if need[0] {
                    let item = n * xs.c * plane + c * plane;
                    s.scatter(&mut gx[item..item + plane], coef);
                }
            });
        }
    }
    let to_tensor = |shape: Shape, v: Vec<f64>| Tensor::new(shape, v.into_iter().map(|a| a as f32).collect());
    Ok(DeformGrads {
        input: if need[0] { Some(to_tensor(xs, gx)?) } else { None },
        offsets: if need[1] { Some(to_tensor(offsets.shape(), goff)?) } else { None },
        mask: if need[2] { Some(to_tensor(mask.shape(), gmask)?) } else { None },
        weight: if need[3] { Some(to_tensor(p.base.weight_shape(), gw)?) } else { None },
        bias: if need[4] && p.base.has_bias {
            Some(conv::bias_grad(gout)?)
        } else {
            None
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| 0.5 + 2.0 * y as f32 + 0.25 * x as f32)
    }

    #[test]
    fn bilinear_is_exact_on_linear_functions() {
        let img = ramp(6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let y: f64 = rng.gen_range(0.0..5.0);
            let x: f64 = rng.gen_range(0.0..6.0);
            let v = bilinear_sample(img.data(), 6, 7, y, x);
            assert!((v - (0.5 + 2.0 * y + 0.25 * x)).abs() < 1e-6);
        }
    }

    #[test]
    fn half_pixel_sample_is_mean_of_neighbours() {
        let img = ramp(4, 4);
        let v = bilinear_sample(img.data(), 4, 4, 1.0, 1.5);
        assert!((v - (img.at(0, 0, 1, 1) + img.at(0, 0, 1, 2)) as f64 / 2.0).abs() < 1e-6);
    }

    #[test]
    fn far_outside_reads_zero() {
        let img = ramp(4, 4);
        assert_eq!(bilinear_sample(img.data(), 4, 4, -1.0, 0.0), 0.0);
        assert_eq!(bilinear_sample(img.data(), 4, 4, 0.0, 4.0), 0.0);
        // Half a pixel past the edge blends with the zero border.
        let v = bilinear_sample(img.data(), 4, 4, 0.0, 3.5);
        assert!((v - img.at(0, 0, 0, 3) as f64 * 0.5).abs() < 1e-6);
    }

    #[test]
    fn zero_offsets_unit_mask_reduces_to_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = ConvParams::same3x3(4, 3);
        let p = DeformParams::new(base, 2);
        let x = Tensor::rand_uniform(Shape::new(2, 4, 7, 6), -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform(base.weight_shape(), -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(base.bias_shape(), -1.0, 1.0, &mut rng);
        let off = Tensor::zeros(Shape::new(2, p.offset_channels(), 7, 6));
        let mask = Tensor::ones(Shape::new(2, p.mask_channels(), 7, 6));
        let d = deform_conv2d(&x, &off, &mask, &w, Some(&b), &p).unwrap();
        let c = conv2d(&x, &w, Some(&b), &base).unwrap();
        assert!(d.max_abs_diff(&c).unwrap() < 1e-5);
    }

    #[test]
    fn unit_vertical_offset_shifts_image() {
        let base = ConvParams::same3x3(1, 1).without_bias();
        let p = DeformParams::new(base, 1);
        let x = ramp(5, 5);
        let mut w = Tensor::zeros(base.weight_shape());
        w.set(0, 0, 1, 1, 1.0);
        let mut off = Tensor::zeros(Shape::new(1, p.offset_channels(), 5, 5));
        for k in 0..9 {
            for y in 0..5 {
                for xx in 0..5 {
                    off.set(0, 2 * k, y, xx, 1.0);
                }
            }
        }
        let mask = Tensor::ones(Shape::new(1, 9, 5, 5));
        let out = deform_conv2d(&x, &off, &mask, &w, None, &p).unwrap();
        for y in 0..4 {
            for xx in 0..5 {
                assert_eq!(out.at(0, 0, y, xx), x.at(0, 0, y + 1, xx));
            }
        }
        // Last row samples beyond the image.
        assert_eq!(out.at(0, 0, 4, 2), 0.0);
    }

    #[test]
    fn mask_scales_samples() {
        let base = ConvParams::same3x3(1, 1).without_bias();
        let p = DeformParams::new(base, 1);
        let x = ramp(4, 4);
        let mut w = Tensor::zeros(base.weight_shape());
        w.set(0, 0, 1, 1, 1.0);
        let off = Tensor::zeros(Shape::new(1, 18, 4, 4));
        let mask = Tensor::full(Shape::new(1, 9, 4, 4), 0.25);
        let out = deform_conv2d(&x, &off, &mask, &w, None, &p).unwrap();
        let expect = x.map(|v| v * 0.25);
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_bad_offset_shape() {
        let base = ConvParams::same3x3(2, 2);
        let p = DeformParams::new(base, 1);
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(base.weight_shape());
        let b = Tensor::zeros(base.bias_shape());
        let off = Tensor::zeros(Shape::new(1, 9, 4, 4));
        let mask = Tensor::zeros(Shape::new(1, 9, 4, 4));
        assert!(deform_conv2d(&x, &off, &mask, &w, Some(&b), &p).is_err());
    }
}
