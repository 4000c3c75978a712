//! Sequential versus rayon execution of the crate's data-parallel loops.
//!
//! Run with `cargo bench -p rcod-core`. Building without default features
//! turns the parallel arm into a sequential loop, which makes the two arms
//! time the same code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rcod::degrade::synth_pairs;
use rcod::models::{Bind, StudentConfig};
use rcod::par::{map_indexed_with, Parallelism};
use rcod::schedule::Schedule;
use rcod::{rng_from_seed, Graph, Tensor};
use std::hint::black_box;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn corpus(c: &mut Criterion) {
    let mut group = c.benchmark_group("synth_pairs_64");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| synth_pairs(64, 32, 4, black_box(7), mode).unwrap())
        });
    }
    group.finish();
}

fn student_gradients(c: &mut Criterion) {
    let cfg = StudentConfig::default();
    let params = cfg.init(&mut rng_from_seed(1)).unwrap();
    let schedule = Schedule::default();
    let mut rng = rng_from_seed(2);
    let items: Vec<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> = (0..8)
        .map(|_| {
            (
                Tensor::randn([4, 16, 16], 1.0, &mut rng),
                Tensor::randn([1, 32, 32], 0.3, &mut rng),
                Tensor::randn([4, 16, 16], 1.0, &mut rng),
            )
        })
        .collect();
    let mut group = c.benchmark_group("student_batch_gradients_8");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                map_indexed_with(mode, items.len(), |i| {
                    let (z, lr, target) = &items[i];
                    let mut g = Graph::new();
                    let zv = g.input(z.clone());
                    let lv = g.input(lr.clone());
                    let out = cfg.forward(&mut g, Bind::trainable(&params), &schedule, zv, lv, 250).unwrap();
                    let tv = g.input(target.clone());
                    let loss = g.mse(out.z_hat, tv).unwrap();
                    g.backward(loss).unwrap().into_params()
                })
            })
        });
    }
    group.finish();
}

fn forward_noising(c: &mut Criterion) {
    let schedule = Schedule::default();
    let z0 = Tensor::<f32>::randn([4, 16, 16], 1.0, &mut rng_from_seed(3));
    let mut group = c.benchmark_group("forward_diffuse_4096");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                // 64 independent streams of 64 draws each
                let sums = map_indexed_with(mode, 64, |i| {
                    let mut rng = rng_from_seed(i as u64);
                    (0..64)
                        .map(|_| schedule.forward_diffuse(&z0, 500, &mut rng).unwrap().z_t.data()[0] as f64)
                        .sum::<f64>()
                });
                black_box(sums.iter().sum::<f64>())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, corpus, student_gradients, forward_noising);
criterion_main!(benches);
