use std::hint::black_box;

use cineforge_bench::{ordering, shot_sets};
use cineforge_core::metrics::{retrieval_prf, tcs, TcsVariant};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_tcs(c: &mut Criterion) {
    let mut group = c.benchmark_group("tcs");
    for n in [10, 100, 1000] {
        let (pred, gt) = ordering(n, 11);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| tcs(black_box(&pred), black_box(&gt), TcsVariant::Duration).unwrap())
        });
    }
    group.finish();
}

fn bench_prf(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieval_prf");
    for size in [10, 1000] {
        let (pred, gt) = shot_sets(size, size as u32 * 2, 12);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| retrieval_prf(black_box(&pred), black_box(&gt)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_tcs, bench_prf);
criterion_main!(benches);
