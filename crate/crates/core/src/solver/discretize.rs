//! Finite-difference Hessian components on structured grids with
//! unequal arms at curved boundaries.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{fd_weights, Extension};
use crate::geometry::{Annulus, Grid, GridMode, NodeClass};

/// Condition imposed on the outer boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OuterCondition {
    Dirichlet(Extension),
    /// `∂u/∂r + (n-2) u / r = 0` on a sphere about the origin, imposed as
    /// `u(x_b) = u(x_i) (|x_i| / |x_b|)^{n-2}` along each cut arm
    Robin,
}

/// A Dirichlet problem for `S_k(D²u) = f` on an annulus.
#[derive(Debug, Clone)]
pub struct BoundaryProblem {
    pub grid: Grid,
    pub classes: Vec<NodeClass>,
    pub region: Annulus,
    pub k: usize,
    pub rhs: f64,
    pub inner: Extension,
    pub outer: OuterCondition,
}

/// `Σ w_j u_j + c` over unknowns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinForm {
    pub idx: Vec<u32>,
    pub w: Vec<f64>,
    pub c: f64,
}

impl LinForm {
    fn push(&mut self, j: u32, w: f64) {
        if let Some(p) = self.idx.iter().position(|&i| i == j) {
            self.w[p] += w;
        } else {
            self.idx.push(j);
            self.w.push(w);
        }
    }

    fn add_scaled(&mut self, other: &LinForm, s: f64) {
        for (&j, &w) in other.idx.iter().zip(&other.w) {
            self.push(j, s * w);
        }
        self.c += s * other.c;
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.w)
            .map(|(&j, &w)| w * u[j as usize])
            .sum::<f64>()
            + self.c
    }
}

#[derive(Debug, Clone, Copy)]
enum Term {
    Unknown(u32),
    Value(f64),
    /// multiple of this node's own unknown
    Scaled(u32, f64),
}

#[derive(Debug, Clone, Copy)]
struct Arm {
    offset: f64,
    term: Term,
}

/// Hessian layout for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// components `(d,d)` for each axis, then `(d,e)`, `d < e`, when mixed
    Full { n: usize, mixed: bool },
    /// `ρρ`, `zz`, `q = u_ρ/ρ` (multiplicity `n-2`), then `ρz` when mixed
    Axisym { n: usize, mixed: bool },
}

impl Layout {
    pub fn n(&self) -> usize {
        match *self {
            Layout::Full { n, .. } | Layout::Axisym { n, .. } => n,
        }
    }

    pub fn components(&self) -> usize {
        match *self {
            Layout::Full { n, mixed } => n + if mixed { n * (n - 1) / 2 } else { 0 },
            Layout::Axisym { mixed, .. } => 3 + usize::from(mixed),
        }
    }

    fn mixed_pairs(&self) -> Vec<(usize, usize)> {
        match *self {
            Layout::Full { n, mixed: true } => (0..n).flat_map(|d| ((d + 1)..n).map(move |e| (d, e))).collect(),
            Layout::Axisym { mixed: true, .. } => vec![(0, 1)],
            _ => Vec::new(),
        }
    }

    /// Physical Hessian from component values.
    pub fn hessian(&self, c: &[f64]) -> DMatrix<f64> {
        match *self {
            Layout::Full { n, .. } => {
                let mut h = DMatrix::zeros(n, n);
                for d in 0..n {
                    h[(d, d)] = c[d];
                }
                for (p, (d, e)) in self.mixed_pairs().into_iter().enumerate() {
                    h[(d, e)] = c[n + p];
                    h[(e, d)] = c[n + p];
                }
                h
            }
            Layout::Axisym { n, mixed } => {
                let mut h = DMatrix::zeros(n, n);
                h[(0, 0)] = c[0];
                h[(1, 1)] = c[1];
                for m in 2..n {
                    h[(m, m)] = c[2];
                }
                if mixed {
                    h[(0, 1)] = c[3];
                    h[(1, 0)] = c[3];
                }
                h
            }
        }
    }

    /// `∂S_k/∂(component)` from `∂S_k/∂H_ij`.
    pub fn chain(&self, deriv: &DMatrix<f64>) -> Vec<f64> {
        match *self {
            Layout::Full { n, .. } => {
                let mut g: Vec<f64> = (0..n).map(|d| deriv[(d, d)]).collect();
                for (d, e) in self.mixed_pairs() {
                    g.push(2.0 * deriv[(d, e)]);
                }
                g
            }
            Layout::Axisym { n, mixed } => {
                let mut g = vec![deriv[(0, 0)], deriv[(1, 1)], (2..n).map(|m| deriv[(m, m)]).sum()];
                if mixed {
                    g.push(2.0 * deriv[(0, 1)]);
                }
                g
            }
        }
    }

    /// Weights of the Laplacian in terms of the components.
    pub fn trace_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.components()];
        match *self {
            Layout::Full { n, .. } => w[..n].iter_mut().for_each(|v| *v = 1.0),
            Layout::Axisym { n, .. } => {
                w[0] = 1.0;
                w[1] = 1.0;
                w[2] = (n - 2) as f64;
            }
        }
        w
    }
}

/// Precomputed stencils for all unknowns.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub layout: Layout,
    /// node → unknown (`u32::MAX` for inactive nodes)
    pub unknown_of: Vec<u32>,
    pub nodes: Vec<usize>,
    /// `comps[i][c]`
    pub comps: Vec<Vec<LinForm>>,
    /// shortest arm at each unknown
    pub h_local: Vec<f64>,
    /// mixed derivatives that had to be dropped
    pub mixed_fallbacks: usize,
}

/// Fraction along `a → b` where `beyond` first holds; `a` is inside.
fn crossing(beyond: impl Fn(&[f64]) -> bool, a: &[f64], b: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    let at = |t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if beyond(&at(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

impl Discretization {
    pub fn new(p: &BoundaryProblem) -> Result<Self> {
        let grid = &p.grid;
        let n = grid.n;
        let mixed = p.k >= 2;
        let layout = match grid.mode {
            GridMode::Full => Layout::Full { n, mixed },
            GridMode::Axisym { .. } => Layout::Axisym { n, mixed },
        };
        let mut unknown_of = vec![u32::MAX; grid.len()];
        let mut nodes = Vec::new();
        for (i, c) in p.classes.iter().enumerate() {
            if c.is_active() {
                unknown_of[i] = nodes.len() as u32;
                nodes.push(i);
            }
        }
        if nodes.len() >= u32::MAX as usize {
            return Err(invalid("too many unknowns"));
        }
        let built: Vec<Result<(Vec<LinForm>, f64, bool)>> = nodes
            .par_iter()
            .map(|&node| node_stencils(p, &layout, &unknown_of, node))
            .collect();
        let mut comps = Vec::with_capacity(nodes.len());
        let mut h_local = Vec::with_capacity(nodes.len());
        let mut mixed_fallbacks = 0;
        for b in built {
            let (c, h, fell_back) = b?;
            comps.push(c);
            h_local.push(h);
            mixed_fallbacks += usize::from(fell_back);
        }
        Ok(Self {
            layout,
            unknown_of,
            nodes,
            comps,
            h_local,
            mixed_fallbacks,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&i| values[i]).collect()
    }

    pub fn scatter(&self, u: &[f64], values: &mut [f64]) {
        for (k, &i) in self.nodes.iter().enumerate() {
            values[i] = u[k];
        }
    }

    /// Laplacian of unknown `i` as a linear form.
    pub fn laplacian(&self, i: usize) -> LinForm {
        let mut f = LinForm::default();
        for (c, w) in self.comps[i].iter().zip(self.layout.trace_weights()) {
            if w != 0.0 {
                f.add_scaled(c, w);
            }
        }
        f
    }
}

fn arms(p: &BoundaryProblem, unknown_of: &[u32], node: usize, d: usize) -> Result<[Arm; 2]> {
    let grid = &p.grid;
    let x = grid.point(node);
    let me = unknown_of[node];
    let mut out = [Arm { offset: 0.0, term: Term::Value(0.0) }; 2];
    for (slot, dir) in [(0usize, -1i32), (1, 1)] {
        let nb = grid
            .neighbor(node, d, dir)
            .ok_or_else(|| invalid(format!("active node {node} lies on the grid edge")))?;
        let class = p.classes[nb.node];
        if class.is_active() {
            out[slot] = Arm {
                offset: nb.offset,
                term: Term::Unknown(unknown_of[nb.node]),
            };
            continue;
        }
        let mut gc = grid.coords(node);
        gc[d] += nb.offset;
        let y = grid.to_physical(&gc);
        let (theta, inner) = if class == NodeClass::Obstacle {
            (crossing(|z| p.region.inner.level(z) <= 0.0, &x, &y), true)
        } else {
            (crossing(|z| p.region.outer.level(z) >= 0.0, &x, &y), false)
        };
        let theta = theta.max(1e-12);
        let xb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + theta * (b - a)).collect();
        let term = if inner {
            Term::Value(p.inner.eval(&xb))
        } else {
            match &p.outer {
                OuterCondition::Dirichlet(g) => Term::Value(g.eval(&xb)),
                OuterCondition::Robin => {
                    let ri = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let rb = xb.iter().map(|v| v * v).sum::<f64>().sqrt();
                    Term::Scaled(me, (ri / rb).powi(grid.n as i32 - 2))
                }
            }
        };
        out[slot] = Arm {
            offset: theta * nb.offset,
            term,
        };
    }
    Ok(out)
}

fn three_point(arms: &[Arm; 2], me: u32, order: usize) -> LinForm {
    let w = fd_weights(0.0, &[arms[0].offset, 0.0, arms[1].offset], order);
    let w = &w[order];
    let mut f = LinForm::default();
    f.push(me, w[1]);
    for (a, wa) in [(arms[0], w[0]), (arms[1], w[2])] {
        match a.term {
            Term::Unknown(j) => f.push(j, wa),
            Term::Value(v) => f.c += wa * v,
            Term::Scaled(j, s) => f.push(j, wa * s),
        }
    }
    f
}

/// First-derivative stencil on grid nodes only (no cut arms) in a fixed
/// style: `0` centered, `1` forward, `-1` backward.
fn node_first_derivative(p: &BoundaryProblem, node: usize, d: usize, style: i32) -> Option<Vec<(usize, f64)>> {
    let grid = &p.grid;
    let nb = |dir: i32| grid.neighbor(node, d, dir).filter(|nb| p.classes[nb.node].is_active());
    match style {
        0 => {
            let (m, q) = (nb(-1)?, nb(1)?);
            let w = fd_weights(0.0, &[m.offset, 0.0, q.offset], 1);
            Some(vec![(m.node, w[1][0]), (node, w[1][1]), (q.node, w[1][2])])
        }
        dir => {
            let s = nb(dir)?;
            Some(vec![(s.node, 1.0 / s.offset), (node, -1.0 / s.offset)])
        }
    }
}

/// Tensor product of first-derivative stencils along `d` then `e`. Each
/// factor uses one style throughout, so the product stays consistent;
/// centered is preferred.
fn mixed_stencil(p: &BoundaryProblem, unknown_of: &[u32], node: usize, d: usize, e: usize) -> Option<LinForm> {
    const STYLES: [(i32, i32); 9] = [(0, 0), (0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    'style: for (sd, se) in STYLES {
        let Some(outer) = node_first_derivative(p, node, d, sd) else {
            continue;
        };
        let mut f = LinForm::default();
        for (a, wa) in outer {
            let Some(inner) = node_first_derivative(p, a, e, se) else {
                continue 'style;
            };
            for (b, wb) in inner {
                f.push(unknown_of[b], wa * wb);
            }
        }
        return Some(f);
    }
    None
}

fn node_stencils(p: &BoundaryProblem, layout: &Layout, unknown_of: &[u32], node: usize) -> Result<(Vec<LinForm>, f64, bool)> {
    let grid = &p.grid;
    let me = unknown_of[node];
    let gd = grid.grid_dim();
    let mut all_arms = Vec::with_capacity(gd);
    for d in 0..gd {
        all_arms.push(arms(p, unknown_of, node, d)?);
    }
    let h_local = all_arms
        .iter()
        .flat_map(|a| a.iter().map(|x| x.offset.abs()))
        .fold(f64::INFINITY, f64::min);
    let mut comps: Vec<LinForm> = Vec::with_capacity(layout.components());
    let mut fell_back = false;
    match *layout {
        Layout::Full { .. } => {
            for a in &all_arms {
                comps.push(three_point(a, me, 2));
            }
        }
        Layout::Axisym { .. } => {
            let rho = grid.coords(node)[0];
            comps.push(three_point(&all_arms[0], me, 2));
            comps.push(three_point(&all_arms[1], me, 2));
            if rho == 0.0 {
                comps.push(comps[0].clone());
            } else {
                let mut q = three_point(&all_arms[0], me, 1);
                q.w.iter_mut().for_each(|w| *w /= rho);
                q.c /= rho;
                comps.push(q);
            }
        }
    }
    for (d, e) in layout.mixed_pairs() {
        match mixed_stencil(p, unknown_of, node, d, e) {
            Some(f) => comps.push(f),
            None => {
                fell_back = true;
                comps.push(LinForm::default());
            }
        }
    }
    Ok((comps, h_local, fell_back))
}
