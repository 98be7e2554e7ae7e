use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use scenopt::scenario::{evaluate_set, evaluate_set_sequential, generate_scenarios, EconomicModelConfig, StrategyParams};
use std::hint::black_box;

fn model() -> EconomicModelConfig {
    EconomicModelConfig {
        indicator_count: 4,
        period_count: 40,
        drift: vec![0.01, 0.04, 0.03, 0.02],
        covariance: vec![
            vec![0.001, 0.0002, 0.0, 0.0],
            vec![0.0002, 0.03, 0.004, 0.0],
            vec![0.0, 0.004, 0.02, 0.001],
            vec![0.0, 0.0, 0.001, 0.005],
        ],
        initial_levels: vec![1.0; 4],
        seed: 5,
    }
}

fn evaluation(c: &mut Criterion) {
    let params = StrategyParams::new(vec![0.1, 0.4, 0.3, 0.2], 0.02, true).unwrap();
    let mut group = c.benchmark_group("evaluate_set");
    group.sample_size(20);
    for n in [1_000usize, 10_000, 100_000] {
        let set = generate_scenarios(&model(), n).unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("rayon", n), &set, |b, set| {
            b.iter(|| evaluate_set(black_box(&params), set, None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &set, |b, set| {
            b.iter(|| evaluate_set_sequential(black_box(&params), set, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, evaluation);
criterion_main!(benches);
