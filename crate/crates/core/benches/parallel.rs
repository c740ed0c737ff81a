//! Default rayon pool against a one-thread pool on the hot paths. Build with
//! `--no-default-features` to time the sequential fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};
use semmatch::correlation::{correlate, FeatureMap};
use semmatch::features::DescriptorConfig;
use semmatch::pipeline::synth::{generate_pair, warp_image};
use semmatch::pipeline::{train, SynthConfig, TrainConfig, TrainSet, WarpFamily};
use semmatch::regressor::{init_weights, RegressorConfig};

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let build = |n| ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool");
    vec![("pool", build(0)), ("one_thread", build(1))]
}

fn features(rng: &mut ChaCha8Rng, side: usize, d: usize) -> FeatureMap {
    let v = (0..side * side * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    FeatureMap::new(side, side, d, v).expect("feature map")
}

fn bench_correlate(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (features(&mut rng, 32, 64), features(&mut rng, 32, 64));
    let mut group = c.benchmark_group("correlate_32x32x64");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| pool.install(|| correlate(&a, &b).expect("correlate")))
        });
    }
    group.finish();
}

fn bench_warp(c: &mut Criterion) {
    let pair = generate_pair(2, WarpFamily::Cascade, 0.2).expect("pair");
    let mut group = c.benchmark_group("warp_image_128");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| pool.install(|| warp_image(&pair.base, &pair.gt_transform)))
        });
    }
    group.finish();
}

fn bench_train(c: &mut Criterion) {
    let descriptor = DescriptorConfig::default().without_resize();
    let set = TrainSet::synthetic(3, 8, 2, WarpFamily::Affine, 0.2, &SynthConfig::default(), &descriptor)
        .expect("training set");
    let init = init_weights(0, RegressorConfig::new(set.features[0].grid())).expect("weights");
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train_epoch_16_pairs");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| pool.install(|| train(&set, &init, &cfg).expect("train")))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_correlate, bench_warp, bench_train);
criterion_main!(benches);
