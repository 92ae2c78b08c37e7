use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use qemlab::spectral::{leading_pair, SolverOptions};
use qemlab::BuiltinSystem;
use qemlab_bench::builtin_operator;

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble");
    g.sample_size(10);
    for res in [243, 2187] {
        g.bench_function(format!("ternary_hole/{res}"), |b| {
            b.iter(|| builtin_operator(BuiltinSystem::TernaryHole, black_box(res), 1e-3).unwrap())
        });
    }
    g.bench_function("open_baker/81", |b| {
        b.iter(|| builtin_operator(BuiltinSystem::OpenBaker, black_box(81), 1e-3).unwrap())
    });
    g.finish();
}

fn products(c: &mut Criterion) {
    let (m, _) = builtin_operator(BuiltinSystem::TernaryHole, 2187, 1e-3).unwrap();
    let v = vec![1.0; m.n_cells()];
    c.bench_function("apply/ternary_hole/2187", |b| b.iter(|| m.apply(black_box(&v)).unwrap()));
    c.bench_function("apply_adjoint/ternary_hole/2187", |b| {
        b.iter(|| m.apply_adjoint(black_box(&v)).unwrap())
    });
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("leading_pair/ternary_hole/2187", |b| {
        b.iter(|| leading_pair(&m, &SolverOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, assembly, products);
criterion_main!(benches);
