//! Families of ring solves ordered in `R` or in `ε`.

use serde::{Deserialize, Serialize};

use super::newton::SolverOptions;
use super::ring::{solve_ring, RingData, RingSolution};
use super::{richardson_tol, SolveReport, TolField};
use crate::error::{invalid, Result};
use crate::geometry::{NodeClass, RingDomain};
use crate::profiles::{default_r0, mu};
use crate::symcore::SymSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub solver: SolverOptions,
    pub r0: Option<f64>,
    /// estimate tol_h from a solve on the refined grid
    pub richardson: bool,
    /// probe region: `|x - x0| >= probe_clearance` and `|x| <= probe_radius`
    pub probe_clearance: f64,
    pub probe_radius: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            r0: None,
            richardson: true,
            probe_clearance: 0.25,
            probe_radius: 1.0,
        }
    }
}

/// Order check between two members of a family: `lower <= upper + tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderPair {
    /// parameter of the member expected to be smaller
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    /// `max(u_lower - u_upper)`
    pub max_violation: f64,
    /// `max(u_lower - u_upper - tol)`
    pub max_excess: f64,
    pub tol_max: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RSweepReport {
    pub radii: Vec<f64>,
    pub pairs: Vec<OrderPair>,
    /// `max |u - ψ|` over the probe region per `R`
    pub psi_gap: Vec<f64>,
    pub reports: Vec<SolveReport>,
    #[serde(skip)]
    pub solutions: Vec<RingSolution>,
    #[serde(skip)]
    pub tols: Vec<TolField>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsSweepReport {
    pub eps: Vec<f64>,
    pub pairs: Vec<OrderPair>,
    pub psi_gap: Vec<f64>,
    /// `ũ^ε(0)` per `ε`, to be compared with `ψ(0) = c`
    pub origin_values: Vec<f64>,
    pub c: f64,
    pub reports: Vec<SolveReport>,
    #[serde(skip)]
    pub solutions: Vec<RingSolution>,
    #[serde(skip)]
    pub tols: Vec<TolField>,
}

fn same_grid(rings: &[RingDomain]) -> Result<()> {
    let g0 = &rings[0].grid;
    if rings.iter().any(|r| r.grid.axes != g0.axes || r.grid.mode != g0.mode) {
        return Err(invalid("sweep members must share one grid"));
    }
    Ok(())
}

fn solve_all(spec: &SymSpec, rings: &[RingDomain], alpha: f64, opts: &SweepOptions) -> Result<(Vec<RingSolution>, Vec<TolField>)> {
    let data = RingData::Ubar { r0: opts.r0 };
    let mut sols = Vec::new();
    let mut tols = Vec::new();
    for ring in rings {
        let s = solve_ring(spec, ring, alpha, &data, &opts.solver)?;
        let tol = if opts.richardson {
            let fine = solve_ring(spec, &ring.refined()?, alpha, &data, &opts.solver)?;
            richardson_tol(&s.field, &fine.field)?
        } else {
            TolField::zeros(ring.grid.len())
        };
        sols.push(s);
        tols.push(tol);
    }
    Ok((sols, tols))
}

/// `lower <= upper + tol` over nodes accepted by `keep`.
fn order_pair(lower: (&RingSolution, f64), upper: (&RingSolution, f64), tol: &TolField, keep: impl Fn(usize) -> bool) -> OrderPair {
    let (mut nodes, mut viol, mut excess) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..tol.values.len() {
        if !keep(i) {
            continue;
        }
        nodes += 1;
        let d = lower.0.field.values[i] - upper.0.field.values[i];
        viol = viol.max(d);
        excess = excess.max(d - tol.values[i]);
    }
    OrderPair {
        lower: lower.1,
        upper: upper.1,
        nodes,
        max_violation: viol,
        max_excess: excess,
        tol_max: tol.max(),
        passed: nodes > 0 && excess <= 0.0,
    }
}

fn psi_gap(spec: &SymSpec, s: &RingSolution, c: f64, x0: &[f64], opts: &SweepOptions) -> f64 {
    let f = &s.field;
    f.active_nodes()
        .filter_map(|i| {
            let x = f.grid.point(i);
            let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d: f64 = x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            (d >= opts.probe_clearance && r <= opts.probe_radius).then(|| (f.values[i] - spec.s_of(&x) - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Solves on each `R` (ascending) and checks `u^{R_i} <= u^{R_{i+1}} + tol`
/// on the smaller domain.
pub fn r_sweep(spec: &SymSpec, rings: &[RingDomain], alpha: f64, opts: &SweepOptions) -> Result<RSweepReport> {
    if rings.is_empty() {
        return Err(invalid("empty sweep"));
    }
    same_grid(rings)?;
    if rings.windows(2).any(|w| w[0].outer.level > w[1].outer.level || w[0].inner != w[1].inner) {
        return Err(invalid("R sweep needs ascending R and a common inner ball"));
    }
    let (sols, tols) = solve_all(spec, rings, alpha, opts)?;
    let c = mu(alpha, spec, opts.r0.unwrap_or_else(|| default_r0(spec)))?;
    let mut pairs = Vec::new();
    for i in 0..rings.len().saturating_sub(1) {
        let tol = tols[i].plus(&tols[i + 1]);
        let (a, b) = (&rings[i], &rings[i + 1]);
        pairs.push(order_pair((&sols[i], a.outer.level), (&sols[i + 1], b.outer.level), &tol, |n| {
            a.classes[n].is_active() && b.classes[n].is_active()
        }));
    }
    let x0 = rings[0].inner.center.clone();
    Ok(RSweepReport {
        radii: rings.iter().map(|r| r.outer.level).collect(),
        pairs,
        psi_gap: sols.iter().map(|s| psi_gap(spec, s, c, &x0, opts)).collect(),
        reports: sols.iter().map(|s| s.report.clone()).collect(),
        solutions: sols,
        tols,
    })
}

/// Solves on each `ε` (descending) and checks `ũ^{ε_i} <= ũ^{ε_{i+1}} + tol`:
/// shrinking the hole raises the solution.
pub fn eps_sweep(spec: &SymSpec, rings: &[RingDomain], alpha: f64, opts: &SweepOptions) -> Result<EpsSweepReport> {
    if rings.is_empty() {
        return Err(invalid("empty sweep"));
    }
    same_grid(rings)?;
    if rings.windows(2).any(|w| {
        w[0].inner.radius < w[1].inner.radius || w[0].inner.center != w[1].inner.center || w[0].outer != w[1].outer
    }) {
        return Err(invalid("eps sweep needs descending eps with common x0 and R"));
    }
    let (sols, tols) = solve_all(spec, rings, alpha, opts)?;
    let c = mu(alpha, spec, opts.r0.unwrap_or_else(|| default_r0(spec)))?;
    let mut pairs = Vec::new();
    for i in 0..rings.len().saturating_sub(1) {
        let tol = tols[i].plus(&tols[i + 1]);
        let (a, b) = (&rings[i], &rings[i + 1]);
        pairs.push(order_pair((&sols[i], a.inner.radius), (&sols[i + 1], b.inner.radius), &tol, |n| {
            a.classes[n] != NodeClass::Exterior && b.classes[n] != NodeClass::Exterior
        }));
    }
    let x0 = rings[0].inner.center.clone();
    let origin = vec![0.0; spec.n];
    let origin_values = sols
        .iter()
        .map(|s| s.field.value_at(&origin).unwrap_or(f64::NAN))
        .collect();
    Ok(EpsSweepReport {
        eps: rings.iter().map(|r| r.inner.radius).collect(),
        pairs,
        psi_gap: sols.iter().map(|s| psi_gap(spec, s, c, &x0, opts)).collect(),
        origin_values,
        c,
        reports: sols.iter().map(|s| s.report.clone()).collect(),
        solutions: sols,
        tols,
    })
}
