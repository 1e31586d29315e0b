use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng;

use diarize_core::gradcore::ops::{attention_full, attention_linear};
use diarize_core::rng::stream_rng;
use diarize_core::Tensor;

const HEAD_DIM: usize = 16;

fn random(rows: usize, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, rows as u64);
    let data = (0..rows * HEAD_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, HEAD_DIM, data).unwrap()
}

fn scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for t in [64usize, 256, 1024] {
        let (q, k, v) = (random(t, 1), random(t, 2), random(t, 3));
        group.throughput(Throughput::Elements(t as u64));
        group.bench_with_input(BenchmarkId::new("full", t), &t, |b, _| {
            b.iter(|| attention_full(&q, &k, &v).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("linear", t), &t, |b, _| {
            b.iter(|| attention_linear(&q, &k, &v).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scaling);
criterion_main!(benches);
