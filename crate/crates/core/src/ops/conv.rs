//! Standard, strided and dilated 2D cross-correlation.
//!
//! The default path gathers output-pixel tiles into a patch matrix and takes
//! inner products against the flattened kernels. A direct loop over kernel
//! taps is kept as a fallback and as a second route for tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gemm::{self, TILE};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub has_bias: bool,
}

impl ConvParams {
    /// 3x3, stride 1, padding 1, with bias.
    pub fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            kernel: (3, 3),
            stride: (1, 1),
            dilation: (1, 1),
            padding: (1, 1),
            has_bias: true,
        }
    }

    /// 1x1 pointwise convolution with bias.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvParams {
            kernel: (1, 1),
            padding: (0, 0),
            ..ConvParams::same3x3(in_channels, out_channels)
        }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    /// Sets the dilation and the padding that keeps stride-1 outputs the same size.
    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self.padding = (d * (self.kernel.0 - 1) / 2, d * (self.kernel.1 - 1) / 2);
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn param_count(&self) -> u64 {
        let w = (self.out_channels * self.in_channels * self.taps()) as u64;
        w + if self.has_bias {
            self.out_channels as u64
        } else {
            0
        }
    }

    /// `floor((H + 2p - d(k - 1) - 1) / s) + 1` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |len: usize, k: usize, s: usize, d: usize, p: usize| {
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            if s == 0 || k == 0 || padded < span {
                None
            } else {
                Some((padded - span) / s + 1)
            }
        };
        match (
            axis(h, self.kernel.0, self.stride.0, self.dilation.0, self.padding.0),
            axis(w, self.kernel.1, self.stride.1, self.dilation.1, self.padding.1),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} too small for {self:?}"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    #[default]
    Im2col,
    Direct,
}

#[derive(Debug, Default)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub(crate) fn check_conv(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: &ConvParams,
) -> Result<(usize, usize)> {
    let xs = x.shape();
    if xs.c != p.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs} has {} channels, expected {}", xs.c, p.in_channels),
        ));
    }
    if w.shape() != p.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!("weight {} expected {}", w.shape(), p.weight_shape()),
        ));
    }
    match (b, p.has_bias) {
        (Some(b), true) if b.shape() != p.bias_shape() => {
            return Err(Error::shape(
                "conv2d",
                format!("bias {} expected {}", b.shape(), p.bias_shape()),
            ))
        }
        (None, true) | (Some(_), false) => {
            return Err(Error::shape(
                "conv2d",
                "bias presence disagrees with parameters",
            ))
        }
        _ => {}
    }
    p.output_size(xs.h, xs.w)
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: &ConvParams) -> Result<Tensor> {
    conv2d_with(x, w, b, p, ConvAlgo::default())
}

pub fn conv2d_with(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: &ConvParams,
    algo: ConvAlgo,
) -> Result<Tensor> {
    let (oh, ow) = check_conv(x, w, b, p)?;
    let xs = x.shape();
    let mut out = Tensor::zeros(Shape::new(xs.n, p.out_channels, oh, ow));
    match algo {
        ConvAlgo::Im2col => im2col_forward(x, w, b, p, oh, ow, &mut out),
        ConvAlgo::Direct => direct_forward(x, w, b, p, oh, ow, &mut out),
    }
    Ok(out)
}

/// Fills `col` (k rows of `t`) with the receptive fields of output pixels
/// `start..start + t` of one batch item. Out-of-range taps read zero.
pub(crate) fn im2col_tile(
    x_item: &[f32],
    h: usize,
    w: usize,
    p: &ConvParams,
    ow: usize,
    start: usize,
    t: usize,
    col: &mut [f32],
) {
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (dh, dw) = p.dilation;
    let (ph, pw) = p.padding;
    let plane = h * w;
    for c in 0..p.in_channels {
        let src = &x_item[c * plane..(c + 1) * plane];
        for ky in 0..kh {
            for kx in 0..kw {
                let kk = (c * kh + ky) * kw + kx;
                let row = &mut col[kk * t..(kk + 1) * t];
                let mut j = 0;
                let mut pix = start;
                while j < t {
                    let oy = pix / ow;
                    let ox0 = pix % ow;
                    let run = (ow - ox0).min(t - j);
                    let dst = &mut row[j..j + run];
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                    } else {
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let off = (kx * dw) as isize - pw as isize;
                        for (i, d) in dst.iter_mut().enumerate() {
                            let ix = ((ox0 + i) * sw) as isize + off;
                            *d = if ix >= 0 && ix < w as isize {
                                srow[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                    j += run;
                    pix += run;
                }
            }
        }
    }
}

fn im2col_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: &ConvParams,
    oh: usize,
    ow: usize,
    out: &mut Tensor,
) {
    let xs = x.shape();
    let k = p.in_channels * p.taps();
    let npix = oh * ow;
    let item_in = xs.c * xs.plane();
    let item_out = p.out_channels * npix;
    let mut col = vec![0f32; k * TILE.min(npix)];
    for n in 0..xs.n {
        let x_item = &x.data()[n * item_in..(n + 1) * item_in];
        let out_item = &mut out.data_mut()[n * item_out..(n + 1) * item_out];
        for start in (0..npix).step_by(TILE) {
            let t = TILE.min(npix - start);
            let col = &mut col[..k * t];
            im2col_tile(x_item, xs.h, xs.w, p, ow, start, t, col);
            gemm::forward_tile(w.data(), b.map(|b| b.data()), k, col, t, out_item, npix, start);
        }
    }
}

/// Valid output-column range `[lo, hi)` for kernel column offset `off = kx*d - p`
/// such that `ox * s + off` lies in `[0, w)`.
fn valid_range(out_len: usize, stride: usize, off: isize, len: usize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let max_in = len as isize - 1 - off;
    let hi = if max_in < 0 {
        0
    } else {
        (max_in as usize / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

fn direct_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: &ConvParams,
    oh: usize,
    ow: usize,
    out: &mut Tensor,
) {
    let xs = x.shape();
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (dh, dw) = p.dilation;
    let (ph, pw) = p.padding;
    let cout = p.out_channels;
    let npix = oh * ow;
    out.data_mut()
        .par_chunks_mut(npix)
        .enumerate()
        .for_each(|(idx, plane_out)| {
            let (n, oc) = (idx / cout, idx % cout);
            let mut acc = vec![b.map_or(0.0, |b| b.data()[oc] as f64); npix];
            for c in 0..xs.c {
                let src = x.plane(n, c);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(oc, c, ky, kx) as f64;
                        let off = (kx * dw) as isize - pw as isize;
                        let (lo, hi) = valid_range(ow, sw, off, xs.w);
                        for oy in 0..oh {
                            let iy = (oy * sh + ky * dh) as isize - ph as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let srow = &src[iy as usize * xs.w..];
                            let arow = &mut acc[oy * ow..(oy + 1) * ow];
                            for ox in lo..hi {
                                let ix = (ox * sw) as isize + off;
                                arow[ox] += wv * srow[ix as usize] as f64;
                            }
                        }
                    }
                }
            }
            for (o, a) in plane_out.iter_mut().zip(acc) {
                *o = a as f32;
            }
        });
}

/// Gradients of a convolution given the upstream gradient `gout`.
/// `need` selects (input, weight, bias).
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    p: &ConvParams,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let xs = x.shape();
    let (oh, ow) = p.output_size(xs.h, xs.w)?;
    let expect = Shape::new(xs.n, p.out_channels, oh, ow);
    if gout.shape() != expect {
        return Err(Error::shape(
            "conv2d backward",
            format!("gradient {} expected {expect}", gout.shape()),
        ));
    }
    let mut grads = ConvGrads::default();
    if need[0] {
        grads.input = Some(input_grad(xs, w, gout, p, oh, ow));
    }
    if need[1] {
        grads.weight = Some(weight_grad(x, gout, p, oh, ow)?);
    }
    if need[2] && p.has_bias {
        grads.bias = Some(bias_grad(gout)?);
    }
    Ok(grads)
}

fn input_grad(xs: Shape, w: &Tensor, gout: &Tensor, p: &ConvParams, oh: usize, ow: usize) -> Tensor {
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (dh, dw) = p.dilation;
    let (ph, pw) = p.padding;
    let cin = xs.c;
    let mut gx = Tensor::zeros(xs);
    gx.data_mut()
        .par_chunks_mut(xs.plane())
        .enumerate()
        .for_each(|(idx, plane_g)| {
            let (n, c) = (idx / cin, idx % cin);
            let mut acc = vec![0f64; xs.plane()];
            for oc in 0..p.out_channels {
                let g = gout.plane(n, oc);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(oc, c, ky, kx) as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        let off = (kx * dw) as isize - pw as isize;
                        let (lo, hi) = valid_range(ow, sw, off, xs.w);
                        for oy in 0..oh {
                            let iy = (oy * sh + ky * dh) as isize - ph as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let arow = &mut acc[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            if sw == 1 {
                                let base = (lo as isize + off) as usize;
                                gemm::axpy_f64(&mut arow[base..base + hi - lo], wv, &grow[lo..hi]);
                            } else {
                                for ox in lo..hi {
                                    let ix = (ox * sw) as isize + off;
                                    arow[ix as usize] += wv * grow[ox] as f64;
                                }
                            }
                        }
                    }
                }
            }
            for (o, a) in plane_g.iter_mut().zip(acc) {
                *o = a as f32;
            }
        });
    gx
}

fn weight_grad(x: &Tensor, gout: &Tensor, p: &ConvParams, oh: usize, ow: usize) -> Result<Tensor> {
    let xs = x.shape();
    let k = p.in_channels * p.taps();
    let npix = oh * ow;
    let item_in = xs.c * xs.plane();
    let item_out = p.out_channels * npix;
    let mut acc = vec![0f64; p.out_channels * k];
    let mut col = vec![0f32; k * TILE.min(npix)];
    for n in 0..xs.n {
        let x_item = &x.data()[n * item_in..(n + 1) * item_in];
        let g_item = &gout.data()[n * item_out..(n + 1) * item_out];
        for start in (0..npix).step_by(TILE) {
            let t = TILE.min(npix - start);
            let col = &mut col[..k * t];
            im2col_tile(x_item, xs.h, xs.w, p, ow, start, t, col);
            gemm::weight_grad_tile(g_item, npix, start, col, t, k, &mut acc);
        }
    }
    Tensor::new(p.weight_shape(), acc.into_iter().map(|v| v as f32).collect())
}

pub(crate) fn bias_grad(gout: &Tensor) -> Result<Tensor> {
    let s = gout.shape();
    let mut acc = vec![0f64; s.c];
    for n in 0..s.n {
        for (c, a) in acc.iter_mut().enumerate() {
            *a += gout.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    Tensor::new(
        Shape::new(1, s.c, 1, 1),
        acc.into_iter().map(|v| v as f32).collect(),
    )
}
