use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mefsfi::loss::{total_loss, LossWeights};
use mefsfi::network::{fuse_luma, model_forward, ForwardOptions, ModelConfig, ModelParams};
use mefsfi::spectrum::{dft2, idft2};
use mefsfi::{Graph, Shape};
use mefsfi_bench::{plane, tensor};

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("dft2");
    for (w, h) in [(64, 64), (256, 256), (96, 72)] {
        let p = plane(w, h, 1);
        group.bench_with_input(
            BenchmarkId::new("round_trip", format!("{w}x{h}")),
            &p,
            |b, p| b.iter(|| idft2(&dft2(black_box(p)))),
        );
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for cin in [16, 64] {
        let x = tensor(Shape::new(8, cin, 64, 64), 2);
        let w = tensor(Shape::from_dims(&[16, cin, 3, 3]).expect("dims"), 3);
        let bias = tensor(Shape::from_dims(&[16]).expect("dims"), 4);
        group.bench_function(BenchmarkId::new("forward_backward", cin), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let (xv, wv, bv) = (
                    g.variable(x.clone()),
                    g.variable(w.clone()),
                    g.variable(bias.clone()),
                );
                let y = g.conv2d(xv, wv, bv).unwrap();
                let s = g.sum(y).unwrap();
                g.backward(s).unwrap();
            })
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let config = ModelConfig::default();
    let params = ModelParams::init(&config, 5).unwrap();
    let (o, u) = (
        tensor(Shape::new(1, 1, 64, 64), 6),
        tensor(Shape::new(1, 1, 64, 64), 7),
    );
    c.bench_function("fuse_luma_64", |b| {
        b.iter(|| fuse_luma(&params, &config, black_box(&o), black_box(&u)).unwrap())
    });

    let (bo, bu) = (
        tensor(Shape::new(8, 1, 64, 64), 8),
        tensor(Shape::new(8, 1, 64, 64), 9),
    );
    let weights = LossWeights::default();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("batch8_patch64", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let (ov, uv) = (g.constant(bo.clone()), g.constant(bu.clone()));
            let out =
                model_forward(&mut g, &bound, &config, ov, uv, ForwardOptions::default()).unwrap();
            let l = total_loss(&mut g, out.fused, ov, uv, &weights).unwrap();
            g.backward(l).unwrap();
        })
    });
    group.finish();
}

criterion_group!(benches, fft, conv, network);
criterion_main!(benches);
