//! Damped Newton on `F(u) = S_k(D_h²u)^{1/k} - f^{1/k}`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::discretize::{BoundaryProblem, Discretization};
use crate::error::{LabError, Result};
use crate::linsolve::{self, CsrMatrix, LinearSolver};
use crate::symcore::{project_into_gamma_k, sk_of_hessian};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// defaults to 1e-8 for k = 1 and 1e-6 otherwise
    pub tol: Option<f64>,
    pub max_newton: usize,
    pub max_restarts: usize,
    /// relaxation sweeps per restart
    pub pseudo_steps: usize,
    pub linear: LinearSolver,
    pub projection_margin: f64,
    /// spacing that residuals are scaled to; defaults to the median arm
    pub h_ref: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_newton: 40,
            max_restarts: 3,
            pseudo_steps: 200,
            linear: LinearSolver::Direct,
            projection_margin: 1e-8,
            h_ref: None,
        }
    }
}

impl SolverOptions {
    pub fn tol_for(&self, k: usize) -> f64 {
        self.tol.unwrap_or(if k == 1 { 1e-8 } else { 1e-6 })
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub unknowns: usize,
    /// `max |F_i| min(1, (h_i/h_ref)²)`
    pub residual_inf: f64,
    pub residual_raw_inf: f64,
    pub tol: f64,
    pub h_ref: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub linear_iterations: usize,
    /// node evaluations that needed the Γ_k projection, over the whole run
    pub projections: usize,
    /// unknowns whose discrete Hessian is outside Γ_k at the returned iterate
    pub nonconvex_nodes: usize,
    pub mixed_fallbacks: usize,
    pub history: Vec<f64>,
}

struct Eval {
    f: Vec<f64>,
    rows: Option<Vec<Vec<(usize, f64)>>>,
    projected: usize,
    nonconvex: usize,
}

fn node_residual(
    disc: &Discretization,
    k: usize,
    target: f64,
    margin: f64,
    u: &[f64],
    i: usize,
    jac: bool,
) -> Result<(f64, Option<Vec<(usize, f64)>>, bool, bool)> {
    let layout = disc.layout;
    let vals: Vec<f64> = disc.comps[i].iter().map(|c| c.eval(u)).collect();
    let kf = k as f64;
    if k == 1 {
        let w = layout.trace_weights();
        let lap: f64 = vals.iter().zip(&w).map(|(a, b)| a * b).sum();
        let row = jac.then(|| merge_rows(disc, i, &w));
        return Ok((lap - target, row, false, target > 0.0 && lap <= 0.0));
    }
    let mut h = layout.hessian(&vals);
    let mut sk = sk_of_hessian(&h, k)?;
    let mut lambda: Vec<f64> = sk.eigenvalues.iter().copied().collect();
    let nonconvex = !crate::symcore::in_gamma_k(&lambda, k);
    let shift = project_into_gamma_k(&mut lambda, k, margin);
    let projected = shift > 0.0;
    if projected {
        h += DMatrix::identity(h.nrows(), h.ncols()) * shift;
        sk = sk_of_hessian(&h, k)?;
    }
    let s = sk.value.max(f64::MIN_POSITIVE);
    let root = s.powf(1.0 / kf);
    let row = jac.then(|| {
        let g = layout.chain(&sk.deriv);
        let scale = root / (kf * s);
        let w: Vec<f64> = g.iter().map(|v| v * scale).collect();
        merge_rows(disc, i, &w)
    });
    Ok((root - target.powf(1.0 / kf), row, projected, nonconvex))
}

fn merge_rows(disc: &Discretization, i: usize, w: &[f64]) -> Vec<(usize, f64)> {
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(32);
    for (c, &wc) in disc.comps[i].iter().zip(w) {
        if wc == 0.0 {
            continue;
        }
        for (&j, &wj) in c.idx.iter().zip(&c.w) {
            row.push((j as usize, wc * wj));
        }
    }
    row.sort_unstable_by_key(|e| e.0);
    row.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    row
}

fn evaluate(disc: &Discretization, p: &BoundaryProblem, margin: f64, u: &[f64], jac: bool) -> Result<Eval> {
    let out: Vec<Result<(f64, Option<Vec<(usize, f64)>>, bool, bool)>> = (0..disc.len())
        .into_par_iter()
        .map(|i| node_residual(disc, p.k, p.rhs, margin, u, i, jac))
        .collect();
    let mut f = Vec::with_capacity(disc.len());
    let mut rows = jac.then(|| Vec::with_capacity(disc.len()));
    let (mut projected, mut nonconvex) = (0, 0);
    for r in out {
        let (fi, row, pr, nc) = r?;
        f.push(fi);
        if let (Some(rows), Some(row)) = (rows.as_mut(), row) {
            rows.push(row);
        }
        projected += usize::from(pr);
        nonconvex += usize::from(nc);
    }
    Ok(Eval {
        f,
        rows,
        projected,
        nonconvex,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Solves the discretized problem starting from `u0` (one value per
/// unknown). Returns the unknowns and the convergence record.
pub fn newton_solve(p: &BoundaryProblem, disc: &Discretization, u0: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    if u0.len() != disc.len() {
        return Err(crate::error::invalid("initial guess has the wrong length"));
    }
    let tol = opts.tol_for(p.k);
    let h_ref = opts.h_ref.unwrap_or_else(|| median(&disc.h_local));
    let scale: Vec<f64> = disc.h_local.iter().map(|h| (h / h_ref).powi(2).min(1.0)).collect();
    let scaled_inf = |f: &[f64]| f.iter().zip(&scale).map(|(a, s)| (a * s).abs()).fold(0.0, f64::max);
    let merit = |f: &[f64]| f.iter().zip(&scale).map(|(a, s)| (a * s).powi(2)).sum::<f64>().sqrt();
    let margin = opts.projection_margin;

    let mut stats = SolveStats {
        unknowns: disc.len(),
        tol,
        h_ref,
        mixed_fallbacks: disc.mixed_fallbacks,
        ..Default::default()
    };
    let mut u = u0;
    let mut restarts = 0;
    loop {
        for _ in 0..opts.max_newton {
            let ev = evaluate(disc, p, margin, &u, true)?;
            stats.projections += ev.projected;
            let r = scaled_inf(&ev.f);
            stats.history.push(r);
            if r <= tol {
                stats.residual_inf = r;
                stats.residual_raw_inf = ev.f.iter().map(|v| v.abs()).fold(0.0, f64::max);
                stats.nonconvex_nodes = ev.nonconvex;
                stats.restarts = restarts;
                return Ok((u, stats));
            }
            let a = CsrMatrix::from_rows(ev.rows.expect("jacobian requested"));
            let rhs: Vec<f64> = ev.f.iter().map(|v| -v).collect();
            let Ok((du, ls)) = linsolve::solve(&a, &rhs, &opts.linear, None) else {
                break;
            };
            stats.linear_iterations += ls.iterations;
            stats.iterations += 1;
            let m0 = merit(&ev.f);
            let mut accepted = false;
            let mut tau = 1.0;
            while tau >= 1.0 / 64.0 {
                let trial: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + tau * d).collect();
                let tf = evaluate(disc, p, margin, &trial, false)?;
                if merit(&tf.f) <= (1.0 - 1e-4 * tau) * m0 || scaled_inf(&tf.f) <= tol {
                    u = trial;
                    accepted = true;
                    break;
                }
                tau *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        // stalled or out of iterations
        if restarts >= opts.max_restarts {
            let ev = evaluate(disc, p, margin, &u, false)?;
            return Err(LabError::SolverFailed(format!(
                "no convergence after {restarts} restarts: residual {:.3e} > tol {tol:.1e} ({} unknowns)",
                scaled_inf(&ev.f),
                disc.len()
            )));
        }
        restarts += 1;
        relax(disc, p, margin, &mut u, opts.pseudo_steps)?;
    }
}

/// Pointwise pseudo-time steps `u_i += dt_i F_i(u)` with `dt_i` from the
/// diagonal of the linearization.
fn relax(disc: &Discretization, p: &BoundaryProblem, margin: f64, u: &mut [f64], steps: usize) -> Result<()> {
    for _ in 0..steps {
        let ev = evaluate(disc, p, margin, u, true)?;
        let rows = ev.rows.expect("jacobian requested");
        for (i, row) in rows.iter().enumerate() {
            let diag = row.iter().find(|e| e.0 == i).map(|e| e.1.abs()).unwrap_or(0.0);
            if diag > 0.0 {
                u[i] += 0.5 * ev.f[i] / diag;
            }
        }
    }
    Ok(())
}

/// The Laplacian as a sparse matrix with its constant part.
pub fn laplacian_system(disc: &Discretization) -> (CsrMatrix, Vec<f64>) {
    let rows: Vec<(Vec<(usize, f64)>, f64)> = (0..disc.len())
        .into_par_iter()
        .map(|i| {
            let f = disc.laplacian(i);
            (f.idx.iter().zip(&f.w).map(|(&j, &w)| (j as usize, w)).collect(), f.c)
        })
        .collect();
    let (rows, c): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    (CsrMatrix::from_rows(rows), c)
}
