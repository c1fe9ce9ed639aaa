//! Small dense kernels shared by the patch-gather convolutions.
//!
//! A "tile" is a run of `t` consecutive output pixels of one batch item. The
//! gathered patch matrix for a tile is stored row-major as `k` rows of `t`
//! values, where `k = in_channels * kh * kw`. All accumulation is in `f64`.

use rayon::prelude::*;

/// Output pixels per tile. Keeps the `f64` accumulators of a 4-channel block
/// inside L1/L2.
pub(crate) const TILE: usize = 512;

const OC_BLOCK: usize = 4;

/// `out[oc][start..start + t] = bias[oc] + sum_k weight[oc][k] * col[k][..]`.
///
/// `out` holds the full output planes of one batch item (`npix` values per
/// channel). Work is split over blocks of output channels; each output value
/// is produced by exactly one task with a fixed summation order.
pub(crate) fn forward_tile(
    weight: &[f32],
    bias: Option<&[f32]>,
    k: usize,
    col: &[f32],
    t: usize,
    out: &mut [f32],
    npix: usize,
    start: usize,
) {
    out.par_chunks_mut(OC_BLOCK * npix)
        .enumerate()
        .for_each(|(blk, planes)| {
            let oc0 = blk * OC_BLOCK;
            let nb = planes.len() / npix;
            let mut acc = vec![0f64; nb * t];
            for i in 0..nb {
                let b = bias.map_or(0.0, |b| b[oc0 + i] as f64);
                acc[i * t..(i + 1) * t].fill(b);
            }
            if nb == OC_BLOCK {
                let (a0, rest) = acc.split_at_mut(t);
                let (a1, rest) = rest.split_at_mut(t);
                let (a2, a3) = rest.split_at_mut(t);
                for kk in 0..k {
                    let row = &col[kk * t..(kk + 1) * t];
                    let w0 = weight[oc0 * k + kk] as f64;
                    let w1 = weight[(oc0 + 1) * k + kk] as f64;
                    let w2 = weight[(oc0 + 2) * k + kk] as f64;
                    let w3 = weight[(oc0 + 3) * k + kk] as f64;
                    for j in 0..t {
                        let c = row[j] as f64;
                        a0[j] += w0 * c;
                        a1[j] += w1 * c;
                        a2[j] += w2 * c;
                        a3[j] += w3 * c;
                    }
                }
            } else {
                for i in 0..nb {
                    let a = &mut acc[i * t..(i + 1) * t];
                    let wrow = &weight[(oc0 + i) * k..(oc0 + i + 1) * k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        axpy_f64(a, wv as f64, &col[kk * t..(kk + 1) * t]);
                    }
                }
            }
            for i in 0..nb {
                let dst = &mut planes[i * npix + start..i * npix + start + t];
                for (d, &a) in dst.iter_mut().zip(&acc[i * t..(i + 1) * t]) {
                    *d = a as f32;
                }
            }
        });
}

/// `gw[oc][kk] += sum_j gout[oc][start + j] * col[kk][j]` with `gw` in `f64`.
pub(crate) fn weight_grad_tile(
    gout: &[f32],
    npix: usize,
    start: usize,
    col: &[f32],
    t: usize,
    k: usize,
    gw: &mut [f64],
) {
    gw.par_chunks_mut(k).enumerate().for_each(|(oc, row)| {
        let g = &gout[oc * npix + start..oc * npix + start + t];
        for (kk, acc) in row.iter_mut().enumerate() {
            *acc += dot_f64(g, &col[kk * t..(kk + 1) * t]);
        }
    });
}

/// `gcol[kk][j] = sum_oc weight[oc][kk] * gout[oc][start + j]`.
pub(crate) fn col_grad_tile(
    weight: &[f32],
    cout: usize,
    k: usize,
    gout: &[f32],
    npix: usize,
    start: usize,
    t: usize,
    gcol: &mut [f64],
) {
    gcol.par_chunks_mut(t).enumerate().for_each(|(kk, row)| {
        row.fill(0.0);
        for oc in 0..cout {
            let wv = weight[oc * k + kk] as f64;
            if wv != 0.0 {
                axpy_f64(row, wv, &gout[oc * npix + start..oc * npix + start + t]);
            }
        }
    });
}

#[inline]
pub(crate) fn axpy_f64(acc: &mut [f64], a: f64, x: &[f32]) {
    for (y, &v) in acc.iter_mut().zip(x) {
        *y += a * v as f64;
    }
}

#[inline]
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut s = [0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] as f64 * y[0] as f64;
        s[1] += x[1] as f64 * y[1] as f64;
        s[2] += x[2] as f64 * y[2] as f64;
        s[3] += x[3] as f64 * y[3] as f64;
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}
