use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use crashsample::ground_truth::build_ground_truth;
use crashsample::harness::{run_repetitions, ExperimentConfig, Method};
use crashsample::par::Execution;
use crashsample::scenario::{build_grid, GridConfig};
use crashsample::sim::SimParams;
use crashsample::stopping::StoppingRule;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ground_truth(c: &mut Criterion) {
    let params = SimParams::default();
    let grid = build_grid(&GridConfig::default(), &params).unwrap();
    let mut group = c.benchmark_group("ground_truth");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_ground_truth(black_box(&grid), &params, exec).unwrap())
        });
    }
    group.finish();
}

fn repetitions(c: &mut Criterion) {
    let params = SimParams::default();
    let grid = build_grid(&GridConfig::default(), &params).unwrap();
    let gt = build_ground_truth(&grid, &params, Execution::Parallel).unwrap();
    let mut group = c.benchmark_group("repetitions");
    group.sample_size(10);
    for method in [Method::Density, Method::Active] {
        let cfg = ExperimentConfig {
            method,
            repetitions: 8,
            stopping: vec![StoppingRule::Budget { max_sims: 1_500 }],
            seed: 3,
            ..ExperimentConfig::default()
        };
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(method.name(), name), |b| {
                b.iter(|| run_repetitions(black_box(&cfg), &grid, &gt, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ground_truth, repetitions);
criterion_main!(benches);
