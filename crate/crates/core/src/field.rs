//! Discrete fields on structured grids and their piecewise-cubic
//! interpolation.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Annulus, Grid, GridMode, NodeClass};
use crate::profiles::{RadialProfile, UbarProfile};

/// Value, gradient and Hessian at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    /// `None` outside the region where the field is defined.
    fn value(&self, x: &[f64]) -> Option<f64>;
}

pub trait SmoothField: ScalarField {
    fn jet(&self, x: &[f64]) -> Result<Jet>;
}

/// Finite-difference weights for derivatives `0..=m` at `z` from nodes `x`
/// (Fornberg's recursion); `w[k][j]` multiplies `f(x_j)` for the k-th
/// derivative.
pub fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// How a field is continued beyond its computational region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Extension {
    Constant { value: f64 },
    Ubar(UbarProfile),
    Radial(RadialProfile),
    /// `M |x|^{2-n}`
    Monopole { m: f64 },
}

impl Extension {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Extension::Constant { value } => *value,
            Extension::Ubar(p) => p.at_point(x).unwrap_or(f64::NAN),
            Extension::Radial(p) => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                p.value(r.max(p.r)).unwrap_or(f64::NAN)
            }
            Extension::Monopole { m } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                m * r.powi(2 - x.len() as i32)
            }
        }
    }

    /// `eval` at many points; the `ū` profile is integrated once.
    pub fn eval_many(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        match self {
            Extension::Ubar(p) => {
                let s: Vec<f64> = xs.iter().map(|x| p.spec.s_of(x)).collect();
                p.values_many(&s).unwrap_or_else(|_| vec![f64::NAN; xs.len()])
            }
            _ => xs.par_iter().map(|x| self.eval(x)).collect(),
        }
    }
}

/// Nodal values with the region they were computed on. Inactive nodes
/// carry the extension values, so every node is finite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub classes: Vec<NodeClass>,
    pub region: Annulus,
    pub values: Vec<f64>,
    /// value inside the inner obstacle
    pub obstacle: Extension,
    /// value outside the outer body
    pub exterior: Extension,
    #[serde(skip)]
    interp: OnceLock<Arc<Hermite>>,
}

impl GridField {
    /// `values` is read at active nodes only; the rest is filled.
    pub fn new(
        grid: Grid,
        classes: Vec<NodeClass>,
        region: Annulus,
        mut values: Vec<f64>,
        obstacle: Extension,
        exterior: Extension,
    ) -> Result<Self> {
        if values.len() != grid.len() || classes.len() != grid.len() {
            return Err(invalid("field size does not match the grid"));
        }
        for (class, ext) in [(NodeClass::Obstacle, &obstacle), (NodeClass::Exterior, &exterior)] {
            let idx: Vec<usize> = (0..grid.len()).filter(|&i| classes[i] == class).collect();
            let pts: Vec<Vec<f64>> = idx.iter().map(|&i| grid.point(i)).collect();
            for (&i, v) in idx.iter().zip(ext.eval_many(&pts)) {
                values[i] = v;
            }
        }
        if let Some(i) = (0..values.len()).find(|&i| classes[i].is_active() && !values[i].is_finite()) {
            return Err(invalid(format!("non-finite value at node {i}")));
        }
        Ok(Self {
            grid,
            classes,
            region,
            values,
            obstacle,
            exterior,
            interp: OnceLock::new(),
        })
    }

    pub fn with_exterior(&self, exterior: Extension) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.classes.clone(),
            self.region.clone(),
            self.values.clone(),
            self.obstacle.clone(),
            exterior,
        )
    }

    fn hermite(&self) -> &Hermite {
        self.interp.get_or_init(|| Arc::new(Hermite::new(self)))
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.classes[node].is_active()
    }

    /// Whether second derivatives of the interpolant are available at `x`.
    pub fn smooth_at(&self, x: &[f64]) -> bool {
        let gc = self.grid.to_grid(x);
        self.in_bounds(&gc) && self.hermite().cubic_cell(&self.grid, &gc)
    }

    fn in_bounds(&self, gc: &[f64]) -> bool {
        self.grid
            .axes
            .iter()
            .zip(gc)
            .all(|(a, &c)| c >= a.coords[0] && c <= *a.coords.last().unwrap())
    }

    /// Interpolated value at a physical point, with the extensions applied
    /// inside the obstacle and outside the outer body.
    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        if self.region.in_obstacle(x) {
            return Some(self.obstacle.eval(x));
        }
        if self.region.outside(x) {
            return Some(self.exterior.eval(x));
        }
        let gc = self.grid.to_grid(x);
        if !self.in_bounds(&gc) {
            return None;
        }
        Some(self.hermite().eval(&self.grid, &self.values, &gc, 0).0)
    }

    /// Value, gradient and Hessian in physical coordinates.
    pub fn jet_at(&self, x: &[f64]) -> Result<Jet> {
        let gc = self.grid.to_grid(x);
        if !self.in_bounds(&gc) || !self.hermite().cubic_cell(&self.grid, &gc) {
            return Err(invalid(format!("no smooth interpolant near {x:?}")));
        }
        let (v, g, h) = self.hermite().eval(&self.grid, &self.values, &gc, 2);
        Ok(physical_jet(&self.grid, x, v, &g, &h))
    }

    /// Nodal value, gradient and Hessian from three-point differences; `None`
    /// unless the node and all its axis neighbors are active.
    pub fn nodal_jet(&self, node: usize) -> Option<Jet> {
        let gd = self.grid.grid_dim();
        let mut g = vec![0.0; gd];
        let mut h = DMatrix::zeros(gd, gd);
        let mut first = Vec::with_capacity(gd);
        for d in 0..gd {
            let m = self.grid.neighbor(node, d, -1)?;
            let p = self.grid.neighbor(node, d, 1)?;
            if !self.is_active(m.node) || !self.is_active(p.node) {
                return None;
            }
            let w = fd_weights(0.0, &[m.offset, 0.0, p.offset], 2);
            let vals = [self.values[m.node], self.values[node], self.values[p.node]];
            g[d] = (0..3).map(|j| w[1][j] * vals[j]).sum();
            h[(d, d)] = (0..3).map(|j| w[2][j] * vals[j]).sum();
            first.push(([m, p], [w[1][0], w[1][1], w[1][2]]));
        }
        for d in 0..gd {
            for e in (d + 1)..gd {
                // D_d D_e via the tensor of first-derivative stencils
                let mut acc = 0.0;
                let (nd, wd) = &first[d];
                let (ne, we) = &first[e];
                for (a, wa) in [(Some(nd[0]), wd[0]), (None, wd[1]), (Some(nd[1]), wd[2])] {
                    let base = a.map_or(node, |nb| nb.node);
                    for (b, wb) in [(Some(ne[0].offset), we[0]), (None, we[1]), (Some(ne[1].offset), we[2])] {
                        let target = match b {
                            None => base,
                            Some(off) => {
                                let dir = if off < 0.0 { -1 } else { 1 };
                                let nb = self.grid.neighbor(base, e, dir)?;
                                if !self.is_active(nb.node) {
                                    return None;
                                }
                                nb.node
                            }
                        };
                        acc += wa * wb * self.values[target];
                    }
                }
                h[(d, e)] = acc;
                h[(e, d)] = acc;
            }
        }
        let gc = self.grid.coords(node);
        let x = self.grid.to_physical(&gc);
        Some(physical_jet(&self.grid, &x, self.values[node], &g, &h))
    }

    pub fn active_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(|&i| self.classes[i].is_active())
    }

    /// Rows `(node, coordinates..., class, u)`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let names: Vec<String> = match self.grid.mode {
            GridMode::Full => (0..self.grid.n).map(|i| format!("x{i}")).collect(),
            GridMode::Axisym { .. } => vec!["rho".into(), "z".into()],
        };
        writeln!(w, "node,{},class,u", names.join(","))?;
        for i in 0..self.values.len() {
            let c = self.grid.coords(i);
            let cs: Vec<String> = c.iter().map(|v| format!("{v:.17e}")).collect();
            let class = serde_json::to_string(&self.classes[i]).unwrap_or_default();
            writeln!(w, "{i},{},{},{:.17e}", cs.join(","), class.trim_matches('"'), self.values[i])?;
        }
        Ok(())
    }
}

impl ScalarField for GridField {
    fn dim(&self) -> usize {
        self.grid.n
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        self.value_at(x)
    }
}

impl SmoothField for GridField {
    fn jet(&self, x: &[f64]) -> Result<Jet> {
        self.jet_at(x)
    }
}

/// Lifts grid-coordinate derivatives to the physical frame.
fn physical_jet(grid: &Grid, x: &[f64], v: f64, g: &[f64], h: &DMatrix<f64>) -> Jet {
    match grid.mode {
        GridMode::Full => Jet {
            value: v,
            grad: g.to_vec(),
            hess: h.clone(),
        },
        GridMode::Axisym { axis } => {
            let n = grid.n;
            let rho = x
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != axis)
                .map(|(_, v)| v * v)
                .sum::<f64>()
                .sqrt();
            let (u_r, u_z, u_rr, u_rz, u_zz) = (g[0], g[1], h[(0, 0)], h[(0, 1)], h[(1, 1)]);
            let mut ez = vec![0.0; n];
            ez[axis] = 1.0;
            let small = rho <= 1e-12 * (1.0 + x[axis].abs());
            let er: Vec<f64> = if small {
                vec![0.0; n]
            } else {
                (0..n).map(|i| if i == axis { 0.0 } else { x[i] / rho }).collect()
            };
            let q = if small { u_rr } else { u_r / rho };
            let mut hess = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let perp = f64::from(u8::from(i == j)) - ez[i] * ez[j];
                    let mut val = u_zz * ez[i] * ez[j];
                    if small {
                        val += u_rr * perp;
                    } else {
                        val += u_rr * er[i] * er[j]
                            + u_rz * (er[i] * ez[j] + ez[i] * er[j])
                            + q * (perp - er[i] * er[j]);
                    }
                    hess[(i, j)] = val;
                }
            }
            let grad: Vec<f64> = (0..n).map(|i| u_r * er[i] + u_z * ez[i]).collect();
            Jet { value: v, grad, hess }
        }
    }
}

/// 1-D derivative stencil at one index: `(node index along the axis, weight)`.
type Stencil1 = Vec<(usize, f64)>;

/// Tensor-product cubic Hermite data: derivative arrays `D_S u` for every
/// subset `S` of grid axes, from fourth-order nodal differences.
#[derive(Debug)]
struct Hermite {
    /// `derivs[mask][node]`
    derivs: Vec<Vec<f64>>,
    /// all nodes in the 5^d box around the node are active
    deep: Vec<bool>,
}

impl Hermite {
    fn new(f: &GridField) -> Self {
        let grid = &f.grid;
        let gd = grid.grid_dim();
        let radial = grid.is_axisym();
        let stencils: Vec<Vec<Stencil1>> = (0..gd)
            .map(|d| axis_stencils(&grid.axes[d].coords, radial && d == 0))
            .collect();
        let mut derivs: Vec<Vec<f64>> = vec![Vec::new(); 1 << gd];
        derivs[0] = f.values.clone();
        // masks in increasing order; the radial axis (0) is applied last so
        // it only ever acts on functions even in ρ
        for mask in 1usize..(1 << gd) {
            let d = (0..gd).rev().find(|d| mask & (1 << d) != 0).unwrap();
            let d = if radial && mask & 1 != 0 { 0 } else { d };
            let src = &derivs[mask & !(1 << d)];
            derivs[mask] = apply_axis(grid, src, d, &stencils[d]);
        }
        let mut deep: Vec<bool> = f.classes.iter().map(|c| c.is_active()).collect();
        for d in 0..gd {
            deep = erode(grid, &deep, d, 2);
        }
        Self { derivs, deep }
    }

    fn cell_corners(grid: &Grid, gc: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut base = Vec::with_capacity(gc.len());
        let mut t = Vec::with_capacity(gc.len());
        let mut h = Vec::with_capacity(gc.len());
        for (a, &c) in grid.axes.iter().zip(gc) {
            let i = a.cell(c);
            let w = a.coords[i + 1] - a.coords[i];
            base.push(i);
            h.push(w);
            t.push(((c - a.coords[i]) / w).clamp(0.0, 1.0));
        }
        (base, t, h)
    }

    fn corner_nodes(grid: &Grid, base: &[usize]) -> Vec<usize> {
        let gd = base.len();
        (0..(1usize << gd))
            .map(|b| {
                let idx: Vec<usize> = (0..gd).map(|d| base[d] + ((b >> d) & 1)).collect();
                grid.index(&idx)
            })
            .collect()
    }

    fn cubic_cell(&self, grid: &Grid, gc: &[f64]) -> bool {
        let (base, _, _) = Self::cell_corners(grid, gc);
        Self::corner_nodes(grid, &base).iter().all(|&n| self.deep[n])
    }

    /// Value, grid-coordinate gradient and Hessian (`order` = 0 skips the
    /// derivatives).
    fn eval(&self, grid: &Grid, values: &[f64], gc: &[f64], order: usize) -> (f64, Vec<f64>, DMatrix<f64>) {
        let gd = gc.len();
        let (base, t, h) = Self::cell_corners(grid, gc);
        let corners = Self::corner_nodes(grid, &base);
        let mut grad = vec![0.0; gd];
        let mut hess = DMatrix::zeros(gd, gd);
        if !corners.iter().all(|&n| self.deep[n]) {
            // multilinear on the cell
            let mut v = 0.0;
            for (b, &node) in corners.iter().enumerate() {
                let mut w = 1.0;
                for d in 0..gd {
                    w *= if (b >> d) & 1 == 1 { t[d] } else { 1.0 - t[d] };
                }
                v += w * values[node];
            }
            return (v, grad, hess);
        }
        // basis[d][bit][type][deriv order]
        let mut basis = vec![[[[0.0; 3]; 2]; 2]; gd];
        for d in 0..gd {
            let (s, w) = (t[d], h[d]);
            let (s2, s3) = (s * s, s * s * s);
            basis[d][0][0] = [2.0 * s3 - 3.0 * s2 + 1.0, (6.0 * s2 - 6.0 * s) / w, (12.0 * s - 6.0) / (w * w)];
            basis[d][1][0] = [-2.0 * s3 + 3.0 * s2, (-6.0 * s2 + 6.0 * s) / w, (-12.0 * s + 6.0) / (w * w)];
            basis[d][0][1] = [w * (s3 - 2.0 * s2 + s), 3.0 * s2 - 4.0 * s + 1.0, (6.0 * s - 4.0) / w];
            basis[d][1][1] = [w * (s3 - s2), 3.0 * s2 - 2.0 * s, (6.0 * s - 2.0) / w];
        }
        let mut v = 0.0;
        for (b, &node) in corners.iter().enumerate() {
            for mask in 0..(1usize << gd) {
                let coef = self.derivs[mask][node];
                if coef == 0.0 {
                    continue;
                }
                let phi = |d: usize, k: usize| basis[d][(b >> d) & 1][(mask >> d) & 1][k];
                let prod_except = |skip: &[usize]| -> f64 {
                    (0..gd).filter(|d| !skip.contains(d)).map(|d| phi(d, 0)).product()
                };
                v += coef * prod_except(&[]);
                if order >= 1 {
                    for e in 0..gd {
                        grad[e] += coef * phi(e, 1) * prod_except(&[e]);
                        if order >= 2 {
                            hess[(e, e)] += coef * phi(e, 2) * prod_except(&[e]);
                            for f2 in (e + 1)..gd {
                                let val = coef * phi(e, 1) * phi(f2, 1) * prod_except(&[e, f2]);
                                hess[(e, f2)] += val;
                                hess[(f2, e)] += val;
                            }
                        }
                    }
                }
            }
        }
        (v, grad, hess)
    }
}

/// Five-point (fourth-order) first-derivative stencils along one axis;
/// the radial axis reflects through 0.
fn axis_stencils(coords: &[f64], radial: bool) -> Vec<Stencil1> {
    let n = coords.len();
    (0..n)
        .map(|i| {
            let mut pts: Vec<(usize, f64)> = Vec::with_capacity(5);
            let lo = i as i64 - 2;
            let hi = i as i64 + 2;
            let (lo, hi) = if radial {
                (lo, hi.min(n as i64 - 1))
            } else {
                let shift_lo = (-lo).max(0);
                let shift_hi = (hi - (n as i64 - 1)).max(0);
                (lo + shift_lo - shift_hi, hi + shift_lo - shift_hi)
            };
            for j in lo..=hi {
                if j < 0 {
                    let m = (-j) as usize;
                    pts.push((m, -coords[m]));
                } else if (j as usize) < n {
                    pts.push((j as usize, coords[j as usize]));
                }
            }
            let xs: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let w = fd_weights(coords[i], &xs, 1);
            pts.iter().zip(&w[1]).map(|(p, wi)| (p.0, *wi)).collect()
        })
        .collect()
}

fn apply_axis(grid: &Grid, src: &[f64], d: usize, st: &[Stencil1]) -> Vec<f64> {
    let stride = grid.strides()[d];
    let len = grid.axes[d].len();
    (0..src.len())
        .into_par_iter()
        .map(|node| {
            let i = (node / stride) % len;
            let base = node - i * stride;
            st[i].iter().map(|&(j, w)| w * src[base + j * stride]).sum()
        })
        .collect()
}

fn erode(grid: &Grid, mask: &[bool], d: usize, r: usize) -> Vec<bool> {
    let stride = grid.strides()[d];
    let len = grid.axes[d].len();
    let radial = grid.is_axisym() && d == 0;
    (0..mask.len())
        .map(|node| {
            let i = (node / stride) % len;
            let base = node - i * stride;
            (-(r as i64)..=(r as i64)).all(|o| {
                let j = i as i64 + o;
                let j = if radial { j.abs() } else { j };
                j >= 0 && (j as usize) < len && mask[base + j as usize * stride]
            })
        })
        .collect()
}

/// Analytic field given by closures; for tests and synthetic checks.
pub struct AnalyticField<F, J>
where
    F: Fn(&[f64]) -> f64 + Sync,
    J: Fn(&[f64]) -> Jet + Sync,
{
    pub n: usize,
    pub f: F,
    pub j: J,
}

impl<F, J> ScalarField for AnalyticField<F, J>
where
    F: Fn(&[f64]) -> f64 + Sync,
    J: Fn(&[f64]) -> Jet + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        Some((self.f)(x))
    }
}

impl<F, J> SmoothField for AnalyticField<F, J>
where
    F: Fn(&[f64]) -> f64 + Sync,
    J: Fn(&[f64]) -> Jet + Sync,
{
    fn jet(&self, x: &[f64]) -> Result<Jet> {
        Ok((self.j)(x))
    }
}
