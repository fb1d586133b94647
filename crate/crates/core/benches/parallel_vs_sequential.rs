use cbm_proposals::datagen::{gen_hexagon, HexagonConfig};
use cbm_proposals::pipeline::{candidates, hexagon_preset};
use cbm_proposals::sampler::run_restarts_with;
use cbm_proposals::select::{greedy_select_with, kmeans_select_with};
use cbm_proposals::{Execution, MetricKind};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_sampling(c: &mut Criterion) {
    let (ds, _) = gen_hexagon(&HexagonConfig { points_per_cluster: 50, ..Default::default() }).unwrap();
    let mut cfg = hexagon_preset(0).hmc;
    cfg.burn_in_steps = 50;
    cfg.samples_per_restart = 20;
    let prior = hexagon_preset(0).prior;
    let mut group = c.benchmark_group("run_restarts");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| run_restarts_with(black_box(&ds), 3, &prior, &cfg, None, exec, &|_| {}).unwrap())
        });
    }
    group.finish();
}

fn bench_selection(c: &mut Criterion) {
    let (ds, _) = gen_hexagon(&HexagonConfig { points_per_cluster: 50, ..Default::default() }).unwrap();
    let mut cfg = hexagon_preset(0);
    cfg.hmc.burn_in_steps = 100;
    cfg.hmc.samples_per_restart = 50;
    let pool = run_restarts_with(&ds, 3, &cfg.prior, &cfg.hmc, None, Execution::default(), &|_| {}).unwrap();
    let items = candidates(&pool, false).items;

    let mut group = c.benchmark_group("selection");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("greedy", name), &items, |b, items| {
            b.iter(|| greedy_select_with(items, 20, MetricKind::Euclidean, 0, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("kmeans", name), &items, |b, items| {
            b.iter(|| kmeans_select_with(items, 20, MetricKind::Euclidean, 0, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sampling, bench_selection);
criterion_main!(benches);
