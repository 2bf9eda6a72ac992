//! `Δu = 0` outside a convex body, `u = 1` on it, `u → 0` at infinity.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::discretize::{BoundaryProblem, Discretization, OuterCondition};
use super::newton::{newton_solve, SolverOptions};
use super::SolveReport;
use crate::error::{invalid, LabError, Result};
use crate::field::{Extension, GridField};
use crate::geometry::{classify, Annulus, Ball, ConvexBody, Grid, GridMode};
use crate::quadrature::gauss_legendre;

/// Maximum-principle and comparison diagnostics of a harmonic solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub solve: SolveReport,
    pub u_min: f64,
    pub u_max: f64,
    /// `0 < u < 1` on every active node
    pub max_principle: bool,
    /// radii of the balls about the origin sandwiching the body
    pub r_inner: f64,
    pub r_outer: f64,
    /// worst violation of `(r/|x|)^{n-2} <= u <= (R/|x|)^{n-2}`
    pub comparison_violation: f64,
    /// smallest nodal `|D_h u|` over nodes with a full stencil
    pub min_grad: f64,
}

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves the exterior problem truncated to `|x| < r_out` with the Robin
/// closure `∂u/∂r + (n-2)u/r = 0`.
pub fn solve_harmonic_exterior(body: &ConvexBody, r_out: f64, grid: Grid, opts: &SolverOptions) -> Result<(GridField, HarmonicReport)> {
    let t0 = Instant::now();
    let n = grid.n;
    if body.dim() != n {
        return Err(invalid("body and grid dimensions differ"));
    }
    if !body.contains(&vec![0.0; n]) {
        return Err(invalid("the body must contain the origin"));
    }
    let (r_inner, r_outer) = body.sandwich_radii();
    if r_out < 4.0 * r_outer {
        return Err(invalid(format!("R_out = {r_out} is not large against the body (outer radius {r_outer})")));
    }
    if let GridMode::Axisym { axis } = grid.mode {
        if !body.axisymmetric_about(axis) {
            return Err(invalid("body is not axisymmetric about the grid axis"));
        }
    }
    let region = Annulus {
        inner: body.clone(),
        outer: ConvexBody::Ball(Ball::new(vec![0.0; n], r_out)?),
    };
    let classes = classify(&grid, &region)?;
    let problem = BoundaryProblem {
        grid: grid.clone(),
        classes: classes.clone(),
        region: region.clone(),
        k: 1,
        rhs: 0.0,
        inner: Extension::Constant { value: 1.0 },
        outer: OuterCondition::Robin,
    };
    let disc = Discretization::new(&problem)?;
    let e = n as i32 - 2;
    let u0: Vec<f64> = disc
        .nodes
        .iter()
        .map(|&i| (r_inner / radius(&grid.point(i))).powi(e).min(1.0))
        .collect();
    let (u, stats) = newton_solve(&problem, &disc, u0, opts)?;
    let mut values = vec![0.0; grid.len()];
    disc.scatter(&u, &mut values);
    // monopole strength seen by the outermost active nodes
    let mut m_sum = 0.0;
    let mut m_cnt = 0.0;
    for (j, &i) in disc.nodes.iter().enumerate() {
        if classes[i] == crate::geometry::NodeClass::OuterAdjacent {
            m_sum += u[j] * radius(&grid.point(i)).powi(e);
            m_cnt += 1.0;
        }
    }
    let m_edge = if m_cnt > 0.0 { m_sum / m_cnt } else { 0.0 };
    let field = GridField::new(
        grid.clone(),
        classes,
        region,
        values,
        Extension::Constant { value: 1.0 },
        Extension::Monopole { m: m_edge },
    )?;

    let (mut u_min, mut u_max, mut viol) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for (j, &i) in disc.nodes.iter().enumerate() {
        let r = radius(&grid.point(i));
        u_min = u_min.min(u[j]);
        u_max = u_max.max(u[j]);
        let lo = (r_inner / r).powi(e).min(1.0);
        let hi = (r_outer / r).powi(e).min(1.0);
        viol = viol.max(lo - u[j]).max(u[j] - hi);
    }
    let min_grad = disc
        .nodes
        .iter()
        .filter_map(|&i| field.nodal_jet(i))
        .map(|j| j.grad.iter().map(|g| g * g).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    let solve = SolveReport {
        sandwich_violation: None,
        grid: grid.descriptor(),
        stats,
        monotonicity_flags: Vec::new(),
        runtime_s: t0.elapsed().as_secs_f64(),
    };
    let report = HarmonicReport {
        solve,
        u_min,
        u_max,
        max_principle: u_min > 0.0 && u_max < 1.0,
        r_inner,
        r_outer,
        comparison_violation: viol.max(0.0),
        min_grad,
    };
    Ok((field, report))
}

/// `u·|x|^{n-2}` averaged over spheres, fitted by `M + b/r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub m: f64,
    pub b: f64,
    pub shells: Vec<f64>,
    /// spherical means of `u r^{n-2}` per shell
    pub shell_values: Vec<f64>,
    /// `max |shell - (M + b/r)| / M`
    pub residual: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    /// slack allowed on the bounds for discretization error in `m`
    pub m_tol: f64,
    /// `r_inner^{n-2} - m_tol <= m <= r_outer^{n-2} + m_tol`
    pub within_bounds: bool,
}

impl AsymptoticFit {
    /// Re-evaluates the bounds with slack `m_tol`.
    pub fn with_tolerance(mut self, n: usize, m_tol: f64) -> Self {
        let e = n as i32 - 2;
        self.m_tol = m_tol;
        self.within_bounds = self.r_inner.powi(e) - m_tol <= self.m && self.m <= self.r_outer.powi(e) + m_tol;
        self
    }
}

/// Quadrature nodes and weights (summing to one) for the normalized
/// surface measure of the unit sphere.
pub fn sphere_rule(n: usize, mode: GridMode, order: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let (x, w) = gauss_legendre(order);
    let mut out = Vec::new();
    match mode {
        GridMode::Axisym { axis } => {
            // polar angle θ from the axis, density sin^{n-2}θ
            let other = if axis == 0 { 1 } else { 0 };
            for (xi, wi) in x.iter().zip(&w) {
                let th = 0.5 * std::f64::consts::PI * (xi + 1.0);
                let mut p = vec![0.0; n];
                p[axis] = th.cos();
                p[other] = th.sin();
                out.push((p, wi * th.sin().powi(n as i32 - 2)));
            }
        }
        GridMode::Full => {
            if n != 3 {
                return Err(invalid("spherical means on full grids are implemented for n = 3"));
            }
            let nphi = 2 * order;
            for (xi, wi) in x.iter().zip(&w) {
                let st = (1.0 - xi * xi).sqrt();
                for j in 0..nphi {
                    let ph = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / nphi as f64;
                    out.push((vec![st * ph.cos(), st * ph.sin(), *xi], *wi));
                }
            }
        }
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    out.iter_mut().for_each(|p| p.1 /= total);
    Ok(out)
}

/// Spherical mean of `value_at` at radius `r`.
pub fn spherical_mean(field: &GridField, r: f64, rule: &[(Vec<f64>, f64)]) -> Result<f64> {
    let mut acc = 0.0;
    for (dir, w) in rule {
        let x: Vec<f64> = dir.iter().map(|d| d * r).collect();
        let v = field
            .value_at(&x)
            .ok_or_else(|| invalid(format!("shell radius {r} leaves the grid")))?;
        acc += w * v;
    }
    Ok(acc)
}

/// Fits `M` from spherical means of `u |x|^{n-2}`. The spherical mean of a
/// decaying exterior harmonic function is exactly `M r^{2-n}`, so the `b/r`
/// term only absorbs truncation error.
pub fn fit_asymptotic_m(field: &GridField, radii: &[f64], body: &ConvexBody, fit_tol: f64) -> Result<AsymptoticFit> {
    if radii.len() < 2 {
        return Err(invalid("need at least two shells"));
    }
    let n = field.grid.n;
    let rule = sphere_rule(n, field.grid.mode, 48)?;
    let e = n as i32 - 2;
    let mut vals = Vec::with_capacity(radii.len());
    for &r in radii {
        vals.push(spherical_mean(field, r, &rule)? * r.powi(e));
    }
    // least squares on [1, 1/r]
    let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&r, &v) in radii.iter().zip(&vals) {
        let q = 1.0 / r;
        s00 += 1.0;
        s01 += q;
        s11 += q * q;
        t0 += v;
        t1 += v * q;
    }
    let det = s00 * s11 - s01 * s01;
    let (m, b) = if det.abs() > 1e-300 {
        ((t0 * s11 - t1 * s01) / det, (s00 * t1 - s01 * t0) / det)
    } else {
        (t0 / s00, 0.0)
    };
    let residual = radii
        .iter()
        .zip(&vals)
        .map(|(&r, &v)| (v - m - b / r).abs())
        .fold(0.0, f64::max)
        / m.abs().max(f64::MIN_POSITIVE);
    let (r_inner, r_outer) = body.sandwich_radii();
    let fit = AsymptoticFit {
        m,
        b,
        shells: radii.to_vec(),
        shell_values: vals,
        residual,
        r_inner,
        r_outer,
        m_tol: 0.0,
        within_bounds: r_inner.powi(e) <= m && m <= r_outer.powi(e),
    };
    if residual > fit_tol {
        return Err(LabError::AsymptoticsNotReached(format!(
            "fit residual {residual:.3e} exceeds {fit_tol:.1e}; increase R_out"
        )));
    }
    Ok(fit)
}
