use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use roughflow::{
    cascade_decompose, decompose_blocks, evolve_decomposition, factor_matrix_with_real_log, lift_brownian, logm,
    solve_rde, time_path, BlockPartition, DMatrix, DVector, GridSpec, Rect, TimeGrid, VectorFieldSet,
};

fn rotation() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

fn lifts(c: &mut Criterion) {
    let grid = TimeGrid::uniform(1.0, 1000).unwrap();
    c.bench_function("lift_brownian d=2 N=1000 r=8", |b| {
        b.iter(|| lift_brownian(black_box(42), 2, &grid, 8).unwrap())
    });
}

fn rde(c: &mut Criterion) {
    let grid = TimeGrid::uniform(1.0, 1000).unwrap();
    let rp = lift_brownian(7, 2, &grid, 4).unwrap();
    let vf = VectorFieldSet::linear(vec![rotation(), DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -0.2])]).unwrap();
    let y0 = DVector::from_vec(vec![1.0, 0.0]);
    c.bench_function("solve_rde linear m=2 d=2 N=1000", |b| b.iter(|| solve_rde(&vf, &rp, &y0, false).unwrap()));
    c.bench_function("solve_rde linear m=2 d=2 N=1000 jacobian", |b| {
        b.iter(|| solve_rde(&vf, &rp, &y0, true).unwrap())
    });
}

fn decompositions(c: &mut Criterion) {
    let grid = TimeGrid::uniform(1.0, 1000).unwrap();
    let rp = time_path(&grid, 0.5).unwrap();
    let a = rotation();
    c.bench_function("decompose_blocks rotation N=1000", |b| {
        b.iter(|| decompose_blocks(&a, BlockPartition::new(1, 1).unwrap(), &rp, 1e6).unwrap())
    });
    let a3 = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 0.0, -0.3, 0.2, 0.0, 0.0, 0.1]);
    c.bench_function("cascade_decompose n=3 N=1000", |b| b.iter(|| cascade_decompose(&a3, &rp, 1e6).unwrap()));
}

fn matrix_functions(c: &mut Criterion) {
    let m = DMatrix::from_fn(5, 5, |i, j| if i == j { 2.0 } else { 0.1 * (i as f64 - j as f64) });
    c.bench_function("logm 5x5", |b| b.iter(|| logm(black_box(&m)).unwrap()));
    c.bench_function("factor_matrix_with_real_log 5x5", |b| {
        b.iter(|| factor_matrix_with_real_log(black_box(&m), 1e-8).unwrap())
    });
}

fn planar(c: &mut Criterion) {
    let grid = TimeGrid::uniform(0.3, 100).unwrap();
    let rp = time_path(&grid, 0.5).unwrap();
    let vf = VectorFieldSet::linear(vec![rotation()]).unwrap();
    let mut group = c.benchmark_group("planar");
    group.sample_size(10);
    group.bench_function("evolve_decomposition 51x51 N=100", |b| {
        b.iter_batched(
            || GridSpec::new(Rect::square(2.0), 51, 51),
            |spec| evolve_decomposition(&vf, &rp, spec).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, lifts, rde, decompositions, matrix_functions, planar);
criterion_main!(benches);
