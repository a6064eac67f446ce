use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polyseg::{
    partition_energy, single_energy, solve_cell, solve_system, CellForm, CouplingMatrix, Partition, Profile,
    SolveOptions,
};
use polyseg_bench::discretization;

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("cell_form");
    for (m, n) in [(1, 4), (2, 5)] {
        let d = discretization(n, m, 3, 2048);
        group.bench_with_input(BenchmarkId::new("assemble", m), &d, |b, d| {
            b.iter(|| CellForm::new(d.grid(), &d.coeffs().k, black_box(0.7), black_box(2.3)).unwrap())
        });
    }
    group.finish();
}

fn energy(c: &mut Criterion) {
    let d = discretization(4, 1, 2, 2048);
    let w = Profile::from_fn(d.grid(), |t| 1.0 + 0.3 * t.cos());
    c.bench_function("single_energy/M=2048", |b| b.iter(|| single_energy(black_box(&w), 1.0, &d).unwrap()));
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    group.sample_size(10);
    let opts = SolveOptions::default();
    for count in [512, 2048] {
        let d = discretization(4, 1, 2, count);
        group.bench_with_input(BenchmarkId::new("solve_cell", count), &d, |b, d| {
            b.iter(|| solve_cell(PI / 4.0, 3.0 * PI / 4.0, 1.0, d, &opts).unwrap())
        });
    }
    let d = discretization(4, 1, 2, 512);
    let cm = CouplingMatrix::uniform(vec![1.0, 1.0], -16.0, d.params().two_star()).unwrap();
    group.bench_function("solve_system/M=512", |b| b.iter(|| solve_system(&cm, &d, None, &opts).unwrap()));
    let p = Partition::new(vec![1.0, 2.0]).unwrap();
    group.bench_function("partition_energy/ell=3", |b| {
        b.iter(|| partition_energy(&p, &[1.0, 1.0, 1.0], &d, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, assembly, energy, solvers);
criterion_main!(benches);
