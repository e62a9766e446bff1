use std::hint::black_box;

use cineforge_bench::{fixture_manifest, identity_instance, voice_points};
use cineforge_core::identity::{analyze, assign_identity, kmeans, IdentityConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("assign_identity");
    for (chars, dets) in [(10, 20), (50, 200)] {
        let (roster, detections) = identity_instance(chars, dets, 512, 21);
        let members: Vec<_> = detections.iter().collect();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{chars}x{dets}")), &chars, |b, _| {
            b.iter(|| assign_identity(black_box(&members), black_box(&roster)).unwrap())
        });
    }
    group.finish();
}

fn bench_kmeans(c: &mut Criterion) {
    let points = voice_points(4, 250, 192, 22);
    c.bench_function("kmeans/4x250", |b| b.iter(|| kmeans(black_box(&points), 4, 42)));
}

fn bench_analyze(c: &mut Criterion) {
    let manifest = fixture_manifest();
    let cfg = IdentityConfig::default();
    c.bench_function("analyze/fixture", |b| b.iter(|| analyze(black_box(&manifest), &cfg)));
}

criterion_group!(benches, bench_assignment, bench_kmeans, bench_analyze);
criterion_main!(benches);
