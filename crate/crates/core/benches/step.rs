use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use onsigma::dynamics::{ComponentSystem, SimParams};
use onsigma::meanfield::{MeanFieldEnsemble, MeanFieldParams};
use onsigma::spectral::Grid;
use onsigma::Exec;

fn system_step(c: &mut Criterion) {
    let grid = Arc::new(Grid::new(16, 1.0, false).unwrap());
    let mut group = c.benchmark_group("system_step");
    for n in [8usize, 64] {
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            let mut p = SimParams::new(grid.clone(), n);
            p.exec = exec;
            let mut sys = ComponentSystem::new(&p).unwrap();
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| black_box(&mut sys).step().unwrap())
            });
        }
    }
    group.finish();
}

fn ensemble_step(c: &mut Criterion) {
    let grid = Arc::new(Grid::new(16, 1.0, false).unwrap());
    let mut group = c.benchmark_group("ensemble_step");
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        let mut p = MeanFieldParams::new(grid.clone(), 256);
        p.exec = exec;
        let mut ens = MeanFieldEnsemble::new(&p).unwrap();
        group.bench_function(name, |b| b.iter(|| black_box(&mut ens).step().unwrap()));
    }
    group.finish();
}

criterion_group!(benches, system_step, ensemble_step);
criterion_main!(benches);
