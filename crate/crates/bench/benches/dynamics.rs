use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use wisdom_core::dynamics::{self, BeliefState};
use wisdom_core::netcore::{self, CentralityKind};
use wisdom_core::simlab::{self, TrialSpec};

fn talkativeness(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + ((i * 37) % 11) as f64).collect()
}

fn bench_network(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    for n in [5usize, 20, 100] {
        let net = netcore::talkativeness_network(&talkativeness(n), 0.5).unwrap();
        let state = BeliefState::new((0..n).map(|i| (i as f64).sqrt()).collect(), 1.0).unwrap();
        group.bench_with_input(BenchmarkId::new("converge", n), &n, |b, _| {
            b.iter(|| dynamics::converge(black_box(&net), black_box(&state), 1e-10, 100_000).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("centrality", n), &n, |b, _| {
            b.iter(|| netcore::centrality(black_box(&net), CentralityKind::Asymptotic).unwrap())
        });
    }
    group.finish();
}

fn bench_ensemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    group.bench_function("discussion_1000", |b| {
        b.iter(|| simlab::run_ensemble(&TrialSpec::discussion(), 1000, black_box(7)).unwrap())
    });
    group.bench_function("delphi_1000", |b| {
        b.iter(|| simlab::run_ensemble(&TrialSpec::delphi(), 1000, black_box(7)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_network, bench_ensemble);
criterion_main!(benches);
