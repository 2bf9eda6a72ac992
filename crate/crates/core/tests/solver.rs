use khessian_core::field::Extension;
use khessian_core::geometry::{Axis, Ball, ConvexBody, Ellipsoid, Grid, GridMode, RingChecks, RingDomain};
use khessian_core::linsolve::{self, LinearSolver};
use khessian_core::solver::{
    fit_asymptotic_m, laplacian_system, solve_harmonic_exterior, solve_ring, solve_ring_axisym, BoundaryProblem,
    Discretization, OuterCondition, RingData, SolverOptions,
};
use khessian_core::SymSpec;

fn uniform_grid(n: usize, mode: GridMode, half: f64, h: f64) -> Grid {
    let axes = match mode {
        GridMode::Full => (0..n).map(|_| Axis::uniform(-half, half, 0.0, h).unwrap()).collect(),
        GridMode::Axisym { .. } => vec![
            Axis::uniform(0.0, half, 0.0, h).unwrap(),
            Axis::uniform(-half, half, 0.0, h).unwrap(),
        ],
    };
    Grid::new(n, mode, axes).unwrap()
}

/// Concentric ring of inner radius `r` and outer radius `rho_out`.
fn concentric(spec: &SymSpec, mode: GridMode, r: f64, rho_out: f64, h: f64) -> RingDomain {
    let n = spec.n;
    let grid = uniform_grid(n, mode, rho_out + 4.0 * h, h);
    let level = 0.5 * spec.a_star * rho_out * rho_out;
    RingDomain::new(
        Ball::new(vec![0.0; n], r).unwrap(),
        Ellipsoid::of_spec(spec, level).unwrap(),
        grid,
        RingChecks { standing_x0: false, r0: None },
    )
    .unwrap()
}

fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn radial_control_k1_full_grid_converges_at_second_order() {
    let spec = SymSpec::isotropic(3, 1).unwrap();
    let opts = SolverOptions::default();
    let mut errors = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        let ring = concentric(&spec, GridMode::Full, 0.5, 1.5, h);
        let sol = solve_ring(&spec, &ring, 0.05, &RingData::Radial, &opts).unwrap();
        assert!(sol.report.stats.residual_inf <= 1e-8);
        errors.push(sol.max_error().unwrap());
    }
    let p = orders(&errors);
    eprintln!("k=1 errors {errors:?} orders {p:?}");
    assert!(p.iter().all(|&o| o >= 1.5), "{errors:?}");
}

#[test]
fn radial_control_k2_axisym_converges() {
    let spec = SymSpec::isotropic(4, 2).unwrap();
    let opts = SolverOptions::default();
    let mode = GridMode::Axisym { axis: 3 };
    let mut errors = Vec::new();
    for h in [0.1, 0.05, 0.025] {
        let ring = concentric(&spec, mode, 0.5, 1.5, h);
        let sol = solve_ring_axisym(&spec, &ring, 0.05, &RingData::Radial, &opts).unwrap();
        assert!(sol.report.stats.residual_inf <= 1e-6);
        assert_eq!(sol.report.stats.nonconvex_nodes, 0);
        errors.push(sol.max_error().unwrap());
    }
    let p = orders(&errors);
    eprintln!("k=2 errors {errors:?} orders {p:?}");
    assert!(p.iter().all(|&o| o >= 1.0), "{errors:?}");
}

#[test]
fn quadratic_solution_is_reproduced_exactly() {
    // α = 0: the radial solution is ½a*(|x|² - r²)
    let spec = SymSpec::isotropic(4, 2).unwrap();
    let ring = concentric(&spec, GridMode::Axisym { axis: 3 }, 0.3, 1.2, 0.05);
    let sol = solve_ring(&spec, &ring, 0.0, &RingData::Radial, &SolverOptions::default()).unwrap();
    assert!(sol.report.stats.history[0] <= 1e-12, "{:?}", sol.report.stats.history);
    assert!(sol.max_error().unwrap() < 1e-12);
}

#[test]
fn k1_newton_matches_direct_poisson_solve() {
    let spec = SymSpec::isotropic(3, 1).unwrap();
    let ring = concentric(&spec, GridMode::Full, 0.3, 1.2, 0.1);
    let sol = solve_ring(&spec, &ring, 1.0, &RingData::Radial, &SolverOptions::default()).unwrap();
    assert_eq!(sol.report.stats.iterations, 1);
    let profile = match &sol.field.exterior {
        Extension::Radial(p) => p.clone(),
        _ => unreachable!(),
    };
    let p = BoundaryProblem {
        grid: ring.grid.clone(),
        classes: ring.classes.clone(),
        region: ring.annulus(),
        k: 1,
        rhs: 1.0,
        inner: Extension::Constant { value: 0.0 },
        outer: OuterCondition::Dirichlet(Extension::Radial(profile)),
    };
    let disc = Discretization::new(&p).unwrap();
    let (a, c) = laplacian_system(&disc);
    let b: Vec<f64> = c.iter().map(|ci| 1.0 - ci).collect();
    let (u, _) = linsolve::solve(&a, &b, &LinearSolver::Direct, None).unwrap();
    let diff = disc
        .nodes
        .iter()
        .zip(&u)
        .map(|(&i, v)| (sol.field.values[i] - v).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn axisym_and_full_grids_agree_for_k1() {
    let spec = SymSpec::isotropic(3, 1).unwrap();
    let opts = SolverOptions::default();
    let h = 0.1;
    let full = solve_ring(&spec, &concentric(&spec, GridMode::Full, 0.3, 1.2, h), 1.0, &RingData::Radial, &opts).unwrap();
    let axi = solve_ring(&spec, &concentric(&spec, GridMode::Axisym { axis: 2 }, 0.3, 1.2, h), 1.0, &RingData::Radial, &opts).unwrap();
    // both within their own discretization error of the exact solution,
    // so they agree within the sum
    let (ef, ea) = (full.max_error().unwrap(), axi.max_error().unwrap());
    let mut worst: f64 = 0.0;
    for i in full.field.active_nodes() {
        let x = full.field.grid.point(i);
        if x[1] != 0.0 || x[0] < 0.0 {
            continue;
        }
        if let Some(v) = axi.field.value_at(&x) {
            worst = worst.max((v - full.field.values[i]).abs());
        }
    }
    eprintln!("full err {ef:e}, axisym err {ea:e}, mismatch {worst:e}");
    assert!(worst <= ef + ea + 1e-12);
}

#[test]
fn harmonic_ball_matches_exact_solution() {
    let r = 1.0;
    let r_out = 12.0;
    let body = ConvexBody::Ball(Ball::new(vec![0.0; 3], r).unwrap());
    let mut errs = Vec::new();
    for h in [0.1, 0.05] {
        let axes = vec![
            Axis::uniform(0.0, r_out + 0.5, 0.0, h).unwrap(),
            Axis::uniform(-r_out - 0.5, r_out + 0.5, 0.0, h).unwrap(),
        ];
        let grid = Grid::new(3, GridMode::Axisym { axis: 2 }, axes).unwrap();
        let (field, rep) = solve_harmonic_exterior(&body, r_out, grid, &SolverOptions::default()).unwrap();
        assert!(rep.max_principle);
        assert!(rep.min_grad > 0.0);
        let err = field
            .active_nodes()
            .map(|i| {
                let x = field.grid.point(i);
                let d = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                (field.values[i] - r / d).abs()
            })
            .fold(0.0, f64::max);
        let fit = fit_asymptotic_m(&field, &[3.0, 4.0, 6.0, 8.0], &body, 1e-2).unwrap();
        eprintln!("h {h}: err {err:e}, M {}", fit.m);
        assert!((fit.m - r).abs() < 0.02 * r);
        errs.push(err);
    }
    assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
}

#[test]
fn ubar_ring_satisfies_the_sandwich() {
    let spec = SymSpec::new(1, vec![0.4, 0.4, 0.2]).unwrap();
    let h = 0.05;
    let r = 120.0;
    let half = (2.0 * r / 0.2f64).sqrt() + 1.0;
    let plan = khessian_core::geometry::GridPlan {
        mode: GridMode::Axisym { axis: 2 },
        half_widths: vec![half; 3],
        core: h,
        core_half_width: 1.0,
        growth: 1.15,
        foci: vec![(vec![0.0, 0.0, 0.45], 0.02)],
    };
    let grid = plan.build(3).unwrap();
    let ring = RingDomain::new(
        Ball::new(vec![0.0, 0.0, 0.45], 0.1).unwrap(),
        Ellipsoid::of_spec(&spec, r).unwrap(),
        grid,
        RingChecks { standing_x0: true, r0: Some(30.0) },
    )
    .unwrap();
    let a0 = khessian_core::profiles::alpha0_search(&spec, 30.0, &[0.0, 0.0, 0.45], 0.1).unwrap();
    let sol = solve_ring(&spec, &ring, a0.alpha0 * 1.01, &RingData::Ubar { r0: Some(30.0) }, &SolverOptions::default()).unwrap();
    eprintln!("sandwich {:?}, stats {:?}", sol.report.sandwich_violation, sol.report.stats.unknowns);
    assert!(sol.report.sandwich_violation.unwrap() < 1e-2);
}
