mod common;

use common::{brute_conv, brute_deform, conv_params, rand_tensor, rng};
use drhdr_core::ops::{conv2d, conv2d_backward, deform_conv2d, upsample2x, upsample2x_backward, DeformParams};
use drhdr_core::{Shape, Tensor};
use proptest::prelude::*;

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| *x as f64 * *y as f64).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_nested_loops(
        n in 1usize..=2, cin in 1usize..=4, cout in 1usize..=4,
        h in 1usize..=9, w in 1usize..=9,
        k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..=2, dil in 1usize..=2, pad in 0usize..=2,
        bias: bool, seed: u64,
    ) {
        let p = conv_params(cin, cout, k, stride, dil, pad, bias);
        let mut r = rng(seed);
        let x = rand_tensor(Shape::new(n, cin, h, w), -1.0, 1.0, &mut r);
        let wt = rand_tensor(p.weight_shape(), -1.0, 1.0, &mut r);
        let b = rand_tensor(p.bias_shape(), -1.0, 1.0, &mut r);
        let b = bias.then_some(&b);
        match brute_conv(&x, &wt, b, &p) {
            Some(expect) => {
                let got = conv2d(&x, &wt, b, &p).unwrap();
                prop_assert!(got.max_abs_diff(&expect).unwrap() < 1e-5);
            }
            None => prop_assert!(conv2d(&x, &wt, b, &p).is_err()),
        }
    }

    #[test]
    fn conv_is_linear_in_input(a in -2.0f32..2.0, seed: u64) {
        let p = conv_params(3, 2, 3, 1, 1, 1, false);
        let mut r = rng(seed);
        let x = rand_tensor(Shape::new(1, 3, 6, 5), -1.0, 1.0, &mut r);
        let y = rand_tensor(Shape::new(1, 3, 6, 5), -1.0, 1.0, &mut r);
        let wt = rand_tensor(p.weight_shape(), -1.0, 1.0, &mut r);
        let lhs = conv2d(&x.zip_map(&y, |u, v| a * u + v).unwrap(), &wt, None, &p).unwrap();
        let cx = conv2d(&x, &wt, None, &p).unwrap();
        let cy = conv2d(&y, &wt, None, &p).unwrap();
        let rhs = cx.zip_map(&cy, |u, v| a * u + v).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-4);
    }

    #[test]
    fn conv_backward_is_the_adjoint(stride in 1usize..=2, dil in 1usize..=2, seed: u64) {
        let p = conv_params(2, 3, 3, stride, dil, 1, false);
        let mut r = rng(seed);
        let x = rand_tensor(Shape::new(2, 2, 7, 6), -1.0, 1.0, &mut r);
        let wt = rand_tensor(p.weight_shape(), -1.0, 1.0, &mut r);
        let y = conv2d(&x, &wt, None, &p).unwrap();
        let g = rand_tensor(y.shape(), -1.0, 1.0, &mut r);
        let grads = conv2d_backward(&x, &wt, &g, &p, [true, true, false]).unwrap();
        let lhs = dot(&y, &g);
        prop_assert!((lhs - dot(&x, grads.input.as_ref().unwrap())).abs() < 1e-3 * (1.0 + lhs.abs()));
        prop_assert!((lhs - dot(&wt, grads.weight.as_ref().unwrap())).abs() < 1e-3 * (1.0 + lhs.abs()));
    }

    #[test]
    fn deform_matches_direct_sampling(groups in prop::sample::select(vec![1usize, 2]), stride in 1usize..=2, seed: u64) {
        let p = DeformParams::new(conv_params(4, 3, 3, stride, 1, 1, true), groups);
        let mut r = rng(seed);
        let x = rand_tensor(Shape::new(2, 4, 7, 6), -1.0, 1.0, &mut r);
        let (oh, ow) = p.base.output_size(7, 6).unwrap();
        let off = rand_tensor(Shape::new(2, p.offset_channels(), oh, ow), -2.5, 2.5, &mut r);
        let mask = rand_tensor(Shape::new(2, p.mask_channels(), oh, ow), 0.0, 1.0, &mut r);
        let wt = rand_tensor(p.base.weight_shape(), -1.0, 1.0, &mut r);
        let b = rand_tensor(p.base.bias_shape(), -1.0, 1.0, &mut r);
        let got = deform_conv2d(&x, &off, &mask, &wt, Some(&b), &p).unwrap();
        let expect = brute_deform(&x, &off, &mask, &wt, Some(&b), &p);
        prop_assert!(got.max_abs_diff(&expect).unwrap() < 1e-5);
    }

    #[test]
    fn deform_without_offsets_is_conv(cin in 1usize..=4, cout in 1usize..=4, h in 3usize..=9, w in 3usize..=9, seed: u64) {
        let p = DeformParams::new(conv_params(cin, cout, 3, 1, 1, 1, true), 1);
        let mut r = rng(seed);
        let x = rand_tensor(Shape::new(1, cin, h, w), -1.0, 1.0, &mut r);
        let wt = rand_tensor(p.base.weight_shape(), -1.0, 1.0, &mut r);
        let b = rand_tensor(p.base.bias_shape(), -1.0, 1.0, &mut r);
        let off = Tensor::zeros(Shape::new(1, p.offset_channels(), h, w));
        let mask = Tensor::ones(Shape::new(1, p.mask_channels(), h, w));
        let d = deform_conv2d(&x, &off, &mask, &wt, Some(&b), &p).unwrap();
        let c = conv2d(&x, &wt, Some(&b), &p.base).unwrap();
        prop_assert!(d.max_abs_diff(&c).unwrap() < 1e-5);
    }

    #[test]
    fn upsample_backward_is_the_adjoint(c in 1usize..=3, h in 1usize..=6, w in 1usize..=6, seed: u64) {
        let mut r = rng(seed);
        let x = rand_tensor(Shape::new(1, c, h, w), -1.0, 1.0, &mut r);
        let y = upsample2x(&x);
        let g = rand_tensor(y.shape(), -1.0, 1.0, &mut r);
        let back = upsample2x_backward(&g, x.shape()).unwrap();
        prop_assert!((dot(&y, &g) - dot(&x, &back)).abs() < 1e-4);
    }

    #[test]
    fn upsample_preserves_constants(v in -3.0f32..3.0, h in 1usize..=5, w in 1usize..=5) {
        let y = upsample2x(&Tensor::full(Shape::new(1, 2, h, w), v));
        prop_assert!(y.data().iter().all(|&u| (u - v).abs() <= 1e-6 * v.abs().max(1.0)));
    }
}

#[test]
fn upsample_interpolates_between_neighbours() {
    let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
    let y = upsample2x(&x);
    assert_eq!(y.data()[..4], [0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn deform_integer_offset_is_a_shift() {
    // Offset (0, +1) on every tap equals convolving the input shifted left,
    // away from the left border where the shifted copy reads padding.
    let p = DeformParams::new(conv_params(1, 1, 3, 1, 1, 1, false), 1);
    let mut r = rng(11);
    let x = rand_tensor(Shape::new(1, 1, 5, 6), -1.0, 1.0, &mut r);
    let wt = rand_tensor(p.base.weight_shape(), -1.0, 1.0, &mut r);
    let mut off = Tensor::zeros(Shape::new(1, p.offset_channels(), 5, 6));
    for k in 0..9 {
        for y in 0..5 {
            for xx in 0..6 {
                off.set(0, 2 * k + 1, y, xx, 1.0);
            }
        }
    }
    let mask = Tensor::ones(Shape::new(1, 9, 5, 6));
    let shifted = Tensor::from_fn(x.shape(), |n, c, y, xx| if xx + 1 < 6 { x.at(n, c, y, xx + 1) } else { 0.0 });
    let d = deform_conv2d(&x, &off, &mask, &wt, None, &p).unwrap();
    let c = conv2d(&shifted, &wt, None, &p.base).unwrap();
    for y in 0..5 {
        for xx in 1..6 {
            assert!((d.at(0, 0, y, xx) - c.at(0, 0, y, xx)).abs() < 1e-5, "at ({y}, {xx})");
        }
    }
}
