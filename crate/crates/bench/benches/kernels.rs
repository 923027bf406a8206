use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use normhyp::bundle::unstable_branch_orbit;
use normhyp::lyapunov::{estimate_type_numbers, period_grid_ex1, ManifoldFrame};
use normhyp::ode::{integrate_variational, IntegratorConfig};
use normhyp::systems::{make_system, SystemKind};
use normhyp::torus::sweep_invariant_set;

fn type_numbers(c: &mut Criterion) {
    let cfg = IntegratorConfig::default();
    let sys = make_system(SystemKind::Example1, 1.0).unwrap();
    let grid = period_grid_ex1(1.0, 10);
    c.bench_function("ex1 type numbers, 10 periods", |b| {
        b.iter(|| estimate_type_numbers(&sys, &ManifoldFrame::CircleEx1, black_box(&[0.0, 0.0]), &grid, &cfg).unwrap())
    });
}

fn variational(c: &mut Criterion) {
    let cfg = IntegratorConfig::default();
    let sys = make_system(SystemKind::Example2, -0.06).unwrap();
    c.bench_function("ex2 variational flow, t = 5", |b| {
        b.iter(|| integrate_variational(&sys, black_box(&[0.5, 0.2]), (0.0, 5.0), &cfg).unwrap())
    });
}

fn torus_sweep(c: &mut Criterion) {
    let cfg = IntegratorConfig::default();
    c.bench_function("ex3 sweep, 64 labels to 0.92 pi", |b| {
        b.iter(|| sweep_invariant_set(black_box(0.65), 0.01, &[0.92 * PI], 64, &cfg).unwrap())
    });
}

fn bundle_orbit(c: &mut Criterion) {
    let cfg = IntegratorConfig::default();
    c.bench_function("bundle unstable-branch orbit", |b| {
        b.iter(|| unstable_branch_orbit(black_box(0.9), &cfg).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = type_numbers, variational, torus_sweep, bundle_orbit
}
criterion_main!(benches);
