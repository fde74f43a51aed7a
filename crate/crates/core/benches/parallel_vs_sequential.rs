//! Same workloads on the default rayon pool and on a single worker. Build
//! with `--no-default-features` to measure the plain sequential fallback.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softpool_core::cloud::{chamfer_accelerated, PointCloud};
use softpool_core::config::RunConfig;
use softpool_core::linalg::matmul;
use softpool_core::model::{batch_gradients, ModelParams, Sample};
use softpool_core::par;
use softpool_core::synth::{generate_pairs, DatasetSpec, ShapeClass};

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
}

fn modes() -> [(&'static str, usize); 2] {
    [("parallel", 0), ("sequential", 1)]
}

fn bench_chamfer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (cloud(&mut rng, 16_384), cloud(&mut rng, 16_384));
    let mut g = c.benchmark_group("chamfer_16384");
    for (name, threads) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| par::with_threads(threads, || chamfer_accelerated(black_box(&a), black_box(&b)).unwrap()))
        });
    }
    g.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, k, n) = (1024, 512, 512);
    let a: Vec<f64> = (0..m * k).map(|_| rng.gen()).collect();
    let b: Vec<f64> = (0..k * n).map(|_| rng.gen()).collect();
    let mut g = c.benchmark_group("matmul_1024x512x512");
    g.sample_size(10);
    for (name, threads) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| par::with_threads(threads, || matmul(black_box(&a), black_box(&b), m, k, n)))
        });
    }
    g.finish();
}

fn bench_batch_gradients(c: &mut Criterion) {
    let cfg = RunConfig::desk();
    let model = cfg.model();
    let loss = cfg.loss();
    let params = ModelParams::init(&model, 0).unwrap();
    let data: Vec<Sample> = generate_pairs(&DatasetSpec::new(ShapeClass::ALL.to_vec(), cfg.batch_size, cfg.n_in, cfg.fine_count(), 0))
        .unwrap()
        .iter()
        .map(|p| p.sample())
        .collect();
    let batch: Vec<&Sample> = data.iter().collect();
    let mut g = c.benchmark_group("batch_gradients_desk_batch8");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, threads) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| par::with_threads(threads, || batch_gradients(&model, &loss, &params, black_box(&batch)).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_chamfer, bench_matmul, bench_batch_gradients);
criterion_main!(benches);
