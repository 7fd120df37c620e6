//! Single-thread versus full rayon pool on the hot paths.
//!
//! Run with `cargo bench -p stacknash-core`. For the fully sequential build,
//! add `--no-default-features`; both groups then measure the same code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use stacknash::carleman::{check_observability, gaussian_terminal, WeightSet};
use stacknash::config::ProblemConfig;
use stacknash::coupled::solve_adjoint;
use stacknash::nash::{solve_nash, ControlTriple};
use stacknash::problem::Problem;

fn problem(n: usize, steps: usize) -> Problem {
    let mut cfg = ProblemConfig::default();
    cfg.geometry.n = n;
    cfg.tree.steps = steps;
    Problem::from_config(&cfg).expect("bench instance")
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1-thread", one), ("pool", all)]
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_sweep");
    for steps in [8, 12] {
        let p = problem(32, steps);
        let y0 = p.y0.as_slice().to_vec();
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, steps), &steps, |b, _| {
                b.iter(|| pool.install(|| black_box(p.propagator().forward(&y0, None, None).unwrap())))
            });
        }
    }
    group.finish();
}

fn bench_adjoint(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjoint_system");
    group.sample_size(20);
    let p = problem(16, 10);
    let x = gaussian_terminal(&p, 1);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| black_box(solve_adjoint(&p, &x).unwrap())))
        });
    }
    group.finish();
}

fn bench_nash(c: &mut Criterion) {
    let mut group = c.benchmark_group("nash_cg");
    group.sample_size(10);
    let p = problem(16, 8);
    let u = ControlTriple::constant(&p, 1.0, 0.5, 0.25);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| black_box(solve_nash(&p, &u).unwrap())))
        });
    }
    group.finish();
}

fn bench_observability(c: &mut Criterion) {
    let mut group = c.benchmark_group("observability_samples");
    group.sample_size(10);
    let p = problem(16, 6);
    let ws = WeightSet::from_problem(&p).unwrap();
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| black_box(check_observability(&p, &ws, 32, 7).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_adjoint, bench_nash, bench_observability);
criterion_main!(benches);
