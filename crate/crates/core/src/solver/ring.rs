//! The ring problem `S_k(D²u) = 1` on `E_R(0) \ B̄_ε(x0)`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::discretize::{BoundaryProblem, Discretization, OuterCondition};
use super::newton::{newton_solve, SolverOptions};
use super::SolveReport;
use crate::error::{invalid, Result};
use crate::field::{Extension, GridField};
use crate::geometry::{GridMode, NodeClass, RingDomain};
use crate::profiles::{default_r0, GluedSubsolution, RadialProfile, UbarProfile};
use crate::symcore::SymSpec;

/// Boundary data on the outer ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RingData {
    /// `ū(½xᵀAx)` with the given `R0` (default `100 λ_max`)
    Ubar { r0: Option<f64> },
    /// concentric control: the explicit radial solution
    Radial,
}

#[derive(Debug, Clone)]
pub struct RingSolution {
    pub field: GridField,
    pub report: SolveReport,
    /// `max(ū_glued - u, u - ψ, 0)` per node (0 off the active set)
    pub sandwich: Option<Vec<f64>>,
    /// exact solution at every node, for the concentric control
    pub exact: Option<Vec<f64>>,
}

impl RingSolution {
    /// `max |u - exact|` over active nodes.
    pub fn max_error(&self) -> Option<f64> {
        let exact = self.exact.as_ref()?;
        Some(
            self.field
                .active_nodes()
                .map(|i| (self.field.values[i] - exact[i]).abs())
                .fold(0.0, f64::max),
        )
    }
}

fn check_axisym(spec: &SymSpec, ring: &RingDomain) -> Result<()> {
    if let GridMode::Axisym { axis } = ring.grid.mode {
        let others: Vec<usize> = (0..spec.n).filter(|&i| i != axis).collect();
        let a0 = spec.a[others[0]];
        if others.iter().any(|&i| (spec.a[i] - a0).abs() > 1e-12 * a0) {
            return Err(invalid(format!("A is not rotationally symmetric about axis {axis}")));
        }
        if others.iter().any(|&i| ring.inner.center[i] != 0.0) {
            return Err(invalid("x0 is off the symmetry axis"));
        }
    }
    Ok(())
}

/// Solves the ring problem with Dirichlet data `0` on the inner sphere.
pub fn solve_ring(spec: &SymSpec, ring: &RingDomain, alpha: f64, data: &RingData, opts: &SolverOptions) -> Result<RingSolution> {
    let t0 = Instant::now();
    if spec.n != ring.grid.n {
        return Err(invalid("spec and grid dimensions differ"));
    }
    check_axisym(spec, ring)?;
    let eps = ring.inner.radius;
    let x0 = ring.inner.center.clone();
    let region = ring.annulus();
    let (exterior, glued) = match data {
        RingData::Ubar { r0 } => {
            let r0 = r0.unwrap_or_else(|| default_r0(spec));
            let glued = GluedSubsolution::new(spec, alpha, r0, &x0, eps)?;
            (Extension::Ubar(UbarProfile::new(spec, alpha, r0)?), Some(glued))
        }
        RingData::Radial => {
            if x0.iter().any(|&v| v != 0.0) {
                return Err(invalid("the radial control needs x0 = 0"));
            }
            (Extension::Radial(RadialProfile::new(spec, eps, alpha)?), None)
        }
    };
    let problem = BoundaryProblem {
        grid: ring.grid.clone(),
        classes: ring.classes.clone(),
        region: region.clone(),
        k: spec.k,
        rhs: 1.0,
        inner: Extension::Constant { value: 0.0 },
        outer: OuterCondition::Dirichlet(exterior.clone()),
    };
    let disc = Discretization::new(&problem)?;
    let pts: Vec<Vec<f64>> = disc.nodes.iter().map(|&i| ring.grid.point(i)).collect();
    let u0 = match (&glued, &exterior) {
        (Some(g), _) => g.eval_many(&pts)?,
        (None, Extension::Radial(p)) => {
            // κ ½a*(|x|² - r²) through the outer data
            let rho_out = (2.0 * ring.outer.level / p.a_star).sqrt();
            let g = p.value(rho_out)?;
            let q = |r2: f64| 0.5 * p.a_star * (r2 - eps * eps);
            let kappa = g / q(rho_out * rho_out);
            pts.iter().map(|x| kappa * q(x.iter().map(|v| v * v).sum())).collect()
        }
        _ => unreachable!("exterior data is ū or radial"),
    };
    let (u, stats) = newton_solve(&problem, &disc, u0, opts)?;
    let mut values = vec![0.0; ring.grid.len()];
    disc.scatter(&u, &mut values);
    let field = GridField::new(
        ring.grid.clone(),
        ring.classes.clone(),
        region,
        values,
        Extension::Constant { value: 0.0 },
        exterior.clone(),
    )?;

    let sandwich = match &glued {
        Some(g) => {
            let mu = g.ubar.mu()?;
            let lower = g.eval_many(&pts)?;
            let mut v = vec![0.0; ring.grid.len()];
            for (j, &node) in disc.nodes.iter().enumerate() {
                let psi = spec.s_of(&pts[j]) + mu;
                let uj = field.values[node];
                v[node] = (lower[j] - uj).max(uj - psi).max(0.0);
            }
            Some(v)
        }
        None => None,
    };
    let exact = match &exterior {
        Extension::Radial(p) => {
            let all: Vec<f64> = (0..ring.grid.len())
                .into_par_iter()
                .map(|i| {
                    let x = ring.grid.point(i);
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r < p.r {
                        0.0
                    } else {
                        p.value(r).unwrap_or(f64::NAN)
                    }
                })
                .collect();
            Some(all)
        }
        _ => None,
    };

    let mut flags = Vec::new();
    if stats.projections > 0 {
        flags.push(format!("gamma_k_projections={}", stats.projections));
    }
    if stats.nonconvex_nodes > 0 {
        flags.push(format!("nonconvex_nodes={}", stats.nonconvex_nodes));
    }
    if stats.mixed_fallbacks > 0 {
        flags.push(format!("mixed_fallbacks={}", stats.mixed_fallbacks));
    }
    let report = SolveReport {
        sandwich_violation: sandwich.as_ref().map(|v| v.iter().copied().fold(0.0, f64::max)),
        grid: ring.grid.descriptor(),
        stats,
        monotonicity_flags: flags,
        runtime_s: t0.elapsed().as_secs_f64(),
    };
    Ok(RingSolution {
        field,
        report,
        sandwich,
        exact,
    })
}

/// `solve_ring` on a `(ρ, z)` grid. The grid mode and the symmetry of `A`
/// and `x0` are checked.
pub fn solve_ring_axisym(spec: &SymSpec, ring: &RingDomain, alpha: f64, data: &RingData, opts: &SolverOptions) -> Result<RingSolution> {
    if !ring.grid.is_axisym() {
        return Err(invalid("solve_ring_axisym needs a (rho, z) grid"));
    }
    solve_ring(spec, ring, alpha, data, opts)
}

/// Measured boundary gradients against the lower bands `2a*ε` and
/// `½√(λ_min R)`, with the global maximum location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBands {
    pub inner_min: f64,
    pub inner_max: f64,
    pub inner_lower: f64,
    pub outer_min: f64,
    pub outer_max: f64,
    pub outer_lower: f64,
    /// largest nodal gradient away from both boundaries
    pub interior_max: f64,
    pub slack: f64,
    pub inner_in_band: bool,
    pub outer_in_band: bool,
    pub max_at_boundary: bool,
}

/// Boundary gradients are estimated from the distance to the boundary:
/// `|u_node - u_b| / dist`.
pub fn gradient_bands(spec: &SymSpec, ring: &RingDomain, field: &GridField) -> Result<GradientBands> {
    let eps = ring.inner.radius;
    let r = ring.outer.level;
    let outer_data = field.exterior.clone();
    let est: Vec<(NodeClass, f64)> = (0..ring.grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let class = ring.classes[i];
            let x = ring.grid.point(i);
            let u = field.values[i];
            match class {
                NodeClass::InnerAdjacent => {
                    let d = ring.inner.signed_distance(&x);
                    (d > 0.0).then(|| (class, u.abs() / d))
                }
                NodeClass::OuterAdjacent => {
                    let ax: f64 = x.iter().zip(&spec.a).map(|(v, a)| (a * v).powi(2)).sum::<f64>().sqrt();
                    let d = (r - spec.s_of(&x)) / ax;
                    // data at the closest boundary point, to first order
                    let xb: Vec<f64> = x.iter().zip(&spec.a).map(|(v, a)| v + d * a * v / ax).collect();
                    (d > 0.0).then(|| (class, (outer_data.eval(&xb) - u).abs() / d))
                }
                NodeClass::Interior => field.nodal_jet(i).map(|j| (class, j.grad.iter().map(|g| g * g).sum::<f64>().sqrt())),
                _ => None,
            }
        })
        .collect();
    let pick = |c: NodeClass| -> (f64, f64) {
        est.iter()
            .filter(|e| e.0 == c)
            .fold((f64::INFINITY, 0.0), |(lo, hi), e| (lo.min(e.1), hi.max(e.1)))
    };
    let (inner_min, inner_max) = pick(NodeClass::InnerAdjacent);
    let (outer_min, outer_max) = pick(NodeClass::OuterAdjacent);
    let (_, interior_max) = pick(NodeClass::Interior);
    let slack = 0.2;
    let inner_lower = 2.0 * spec.a_star * eps;
    let outer_lower = 0.5 * (spec.lambda_min() * r).sqrt();
    Ok(GradientBands {
        inner_min,
        inner_max,
        inner_lower,
        outer_min,
        outer_max,
        outer_lower,
        interior_max,
        slack,
        inner_in_band: inner_min >= inner_lower * (1.0 - slack),
        outer_in_band: outer_min >= outer_lower * (1.0 - slack),
        max_at_boundary: interior_max <= inner_max.max(outer_max) * (1.0 + slack),
    })
}
