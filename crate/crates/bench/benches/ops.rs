use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use drhdr_core::ops::{conv2d_with, deform_conv2d, upsample2x, ConvAlgo, ConvParams, DeformParams};
use drhdr_core::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv3x3(cin: usize, cout: usize) -> ConvParams {
    ConvParams {
        in_channels: cin,
        out_channels: cout,
        kernel: (3, 3),
        stride: (1, 1),
        dilation: (1, 1),
        padding: (1, 1),
        has_bias: true,
    }
}

fn rand(shape: Shape, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = conv3x3(42, 42);
    let w = rand(p.weight_shape(), -0.1, 0.1, &mut rng);
    let b = rand(p.bias_shape(), -0.1, 0.1, &mut rng);
    let mut g = c.benchmark_group("conv2d_42x42_3x3");
    for size in [32usize, 64] {
        let x = rand(Shape::new(1, 42, size, size), 0.0, 1.0, &mut rng);
        for algo in [ConvAlgo::Im2col, ConvAlgo::Direct] {
            g.bench_with_input(BenchmarkId::new(format!("{algo:?}"), size), &x, |bch, x| {
                bch.iter(|| conv2d_with(black_box(x), &w, Some(&b), &p, algo).unwrap())
            });
        }
    }
    g.finish();
}

fn bench_deform(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let groups = 7;
    let p = DeformParams { base: conv3x3(42, 42), groups };
    let w = rand(p.base.weight_shape(), -0.1, 0.1, &mut rng);
    let b = rand(p.base.bias_shape(), -0.1, 0.1, &mut rng);
    let size = 64;
    let x = rand(Shape::new(1, 42, size, size), 0.0, 1.0, &mut rng);
    let off = rand(Shape::new(1, 2 * 9 * groups, size, size), -2.0, 2.0, &mut rng);
    let mask = rand(Shape::new(1, 9 * groups, size, size), 0.0, 1.0, &mut rng);
    c.bench_function("deform_conv2d_42x42_g7_64", |bch| {
        bch.iter(|| deform_conv2d(black_box(&x), &off, &mask, &w, Some(&b), &p).unwrap())
    });
}

fn bench_upsample(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand(Shape::new(1, 42, 64, 64), 0.0, 1.0, &mut rng);
    c.bench_function("upsample2x_42x64x64", |bch| bch.iter(|| upsample2x(black_box(&x))));
}

criterion_group!(benches, bench_conv, bench_deform, bench_upsample);
criterion_main!(benches);
