use std::hint::black_box;

use cate_select::harness::{run_experiment, ExperimentConfig};
use cate_select::par::Execution;
use cate_select::selectors::{cross_fitted_tensor, naive_from_tensor, split_for};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let config = ExperimentConfig {
            n: 1000,
            repetitions: 16,
            execution,
            ..ExperimentConfig::competitive_and_inferior()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{execution:?}")), &config, |b, cfg| {
            b.iter(|| run_experiment(black_box(cfg)).unwrap())
        });
    }
    group.finish();
}

fn single_dataset(c: &mut Criterion) {
    let config = ExperimentConfig {
        n: 5000,
        ..ExperimentConfig::competitive_and_inferior()
    };
    let (ds, cands, truth) = config.draw(0).unwrap();
    let oracle = truth.oracle_nuisance();
    let split = split_for(ds.len(), &config.selector).unwrap();
    let source = config.nuisance.source(&oracle);
    c.bench_function("cross_fitted_tensor/n5000_p7", |b| {
        b.iter(|| cross_fitted_tensor(black_box(&ds), &cands, &split, &source).unwrap())
    });
    let tensor = cross_fitted_tensor(&ds, &cands, &split, &source).unwrap();
    c.bench_function("naive_bootstrap/n5000_p7", |b| {
        b.iter(|| naive_from_tensor(black_box(&tensor), &config.selector).unwrap())
    });
}

criterion_group!(benches, experiment, single_dataset);
criterion_main!(benches);
