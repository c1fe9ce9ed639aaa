//! Fixed bilinear x2 upsampling (half-pixel centres, edges clamped).

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Source index pair and blend weight for output coordinate `i` along an
/// axis of input length `len`.
#[inline]
fn source(i: usize, len: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (oh, ow) = (2 * s.h, 2 * s.w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    if s.numel() == 0 {
        return out;
    }
    let cols: Vec<_> = (0..ow).map(|j| source(j, s.w)).collect();
    let plane_out = oh * ow;
    for (idx, dst) in out.data_mut().chunks_mut(plane_out).enumerate() {
        let src = x.plane(idx / s.c, idx % s.c);
        for i in 0..oh {
            let (y0, y1, ly) = source(i, s.h);
            let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
            for (j, &(x0, x1, lx)) in cols.iter().enumerate() {
                let top = r0[x0] as f64 * (1.0 - lx) + r0[x1] as f64 * lx;
                let bot = r1[x0] as f64 * (1.0 - lx) + r1[x1] as f64 * lx;
                dst[i * ow + j] = (top * (1.0 - ly) + bot * ly) as f32;
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: scatters each output gradient back to the
/// four source pixels with the forward blend weights.
pub fn upsample2x_backward(gout: &Tensor, in_shape: Shape) -> Result<Tensor> {
    let s = in_shape;
    let gs = gout.shape();
    if gs != Shape::new(s.n, s.c, 2 * s.h, 2 * s.w) {
        return Err(Error::shape(
            "upsample2x backward",
            format!("gradient {gs} for input {s}"),
        ));
    }
    let mut gx = Tensor::zeros(s);
    if s.numel() == 0 {
        return Ok(gx);
    }
    let (oh, ow) = (gs.h, gs.w);
    let cols: Vec<_> = (0..ow).map(|j| source(j, s.w)).collect();
    let mut acc = vec![0f64; s.plane()];
    for (idx, dst) in gx.data_mut().chunks_mut(s.plane()).enumerate() {
        acc.fill(0.0);
        let g = gout.plane(idx / s.c, idx % s.c);
        for i in 0..oh {
            let (y0, y1, ly) = source(i, s.h);
            for (j, &(x0, x1, lx)) in cols.iter().enumerate() {
                let v = g[i * ow + j] as f64;
                acc[y0 * s.w + x0] += v * (1.0 - ly) * (1.0 - lx);
                acc[y0 * s.w + x1] += v * (1.0 - ly) * lx;
                acc[y1 * s.w + x0] += v * ly * (1.0 - lx);
                acc[y1 * s.w + x1] += v * ly * lx;
            }
        }
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = *a as f32;
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(1, 2, 3, 5), 1.75);
        let y = upsample2x(&x);
        assert_eq!(y.shape(), Shape::new(1, 2, 6, 10));
        assert!(y.data().iter().all(|&v| (v - 1.75).abs() < 1e-7));
    }

    #[test]
    fn two_by_two_hand_values() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample2x(&x);
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        assert_eq!(y.at(0, 0, 0, 3), 1.0);
        assert_eq!(y.at(0, 0, 3, 0), 2.0);
        assert_eq!(y.at(0, 0, 3, 3), 3.0);
        // Row 0: source x = -0.25 -> 0, 0.25, 0.75, 1.25 -> 1.
        let row: Vec<f32> = (0..4).map(|j| y.at(0, 0, 0, j)).collect();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
        // (1, 1) sits at source (0.25, 0.25).
        assert!((y.at(0, 0, 1, 1) - 0.75).abs() < 1e-6);
    }

    #[test]
    fn backward_is_adjoint() {
        // <up(x), g> == <x, up^T(g)>
        let s = Shape::new(1, 2, 3, 4);
        let x = Tensor::from_fn(s, |_, c, y, x| (c as f32 + 1.0) * (y as f32 - 0.3 * x as f32));
        let gs = Shape::new(1, 2, 6, 8);
        let g = Tensor::from_fn(gs, |_, c, y, x| ((c + 2 * y + 3 * x) % 7) as f32 - 3.0);
        let lhs: f64 = upsample2x(&x).data().iter().zip(g.data()).map(|(a, b)| (*a * *b) as f64).sum();
        let gx = upsample2x_backward(&g, s).unwrap();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| (*a * *b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
