use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use khessian_core::geometry::{Axis, Ball, Ellipsoid, Grid, GridMode, RingChecks, RingDomain};
use khessian_core::profiles;
use khessian_core::solver::{solve_ring_axisym, RingData, SolverOptions};
use khessian_core::symcore::{elem_sym, elem_sym_all};
use khessian_core::SymSpec;

fn symmetric_functions(c: &mut Criterion) {
    let lambda: Vec<f64> = (0..8).map(|i| 0.3 + 0.1 * i as f64).collect();
    c.bench_function("elem_sym n=8 k=4", |b| b.iter(|| elem_sym(black_box(&lambda), 4).unwrap()));
    c.bench_function("elem_sym_all n=8", |b| b.iter(|| elem_sym_all(black_box(&lambda), 8)));
}

fn profile_quadrature(c: &mut Criterion) {
    let spec = SymSpec::normalized(2, &[1.0, 1.0, 0.5]).unwrap();
    let r0 = profiles::default_r0(&spec);
    c.bench_function("mu alpha=100", |b| b.iter(|| profiles::mu(black_box(100.0), &spec, r0).unwrap()));
    let p = profiles::UbarProfile::new(&spec, 100.0, r0).unwrap();
    c.bench_function("ubar value", |b| b.iter(|| p.value(black_box(2.5 * r0)).unwrap()));
}

// concentric k=2 ring in R^4 on the axisymmetric grid
fn small_solve(c: &mut Criterion) {
    let spec = SymSpec::isotropic(4, 2).unwrap();
    let h = 0.1;
    let half = 1.5 + 4.0 * h;
    let grid = Grid::new(
        4,
        GridMode::Axisym { axis: 3 },
        vec![Axis::uniform(0.0, half, 0.0, h).unwrap(), Axis::uniform(-half, half, 0.0, h).unwrap()],
    )
    .unwrap();
    let ring = RingDomain::new(
        Ball::new(vec![0.0; 4], 0.5).unwrap(),
        Ellipsoid::of_spec(&spec, 0.5 * spec.a_star * 1.5 * 1.5).unwrap(),
        grid,
        RingChecks { standing_x0: false, r0: None },
    )
    .unwrap();
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("axisym k=2 h=0.1", |b| {
        b.iter(|| solve_ring_axisym(&spec, &ring, 0.05, &RingData::Radial, &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, symmetric_functions, profile_quadrature, small_solve);
criterion_main!(benches);
