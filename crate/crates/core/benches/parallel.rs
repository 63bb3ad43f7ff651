//! Sequential vs rayon execution of the hot data-parallel loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jointdec::data::{augment_batch, AugmentPolicy};
use jointdec::nn::{build_multihead, ArchSpec, HeadOrder};
use jointdec::tensor::ops;
use jointdec::{Exec, Tensor};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn batch(n: usize, c: usize, hw: usize) -> Tensor {
    Tensor::from_fn(&[n, c, hw, hw], |i| ((i * 7919) % 257) as f64 / 257.0 - 0.5)
}

fn conv(c: &mut Criterion) {
    let x = batch(64, 16, 16);
    let k = Tensor::from_fn(&[32, 16, 3, 3], |i| ((i * 31) % 17) as f64 / 17.0 - 0.5);
    let grad = vec![0.01; 64 * 32 * 16 * 16];
    let mut g = c.benchmark_group("conv2d 64x16x16x16 -> 32");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| ops::conv2d(&x, &k, 1, 1, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| ops::conv2d_backward(&x, &k, &grad, 1, 1, true, exec).unwrap())
        });
    }
    g.finish();
}

fn augment(c: &mut Criterion) {
    let x = batch(128, 3, 16);
    let policy = AugmentPolicy::toy(vec![0.5; 3], vec![0.25; 3]);
    let seeds: Vec<u64> = (0..128).collect();
    let mut g = c.benchmark_group("augment_batch 128x3x16x16");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| augment_batch(&x, &policy, &seeds, exec).unwrap()));
    }
    g.finish();
}

fn inference(c: &mut Criterion) {
    let net = build_multihead(&ArchSpec::res_tiny(3, 16, 3), 3, HeadOrder::DeepFirst, 1).unwrap();
    let x = batch(200, 3, 16);
    let mut g = c.benchmark_group("res-tiny m=3 predict 200 images");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| net.predict(&x, 100, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, conv, augment, inference);
criterion_main!(benches);
