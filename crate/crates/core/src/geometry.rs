//! Balls, ellipsoids, Minkowski interpolants, structured (possibly graded)
//! tensor grids, and node classification for ring domains.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::symcore::SymSpec;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        let d: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        d - self.radius
    }

    pub fn support(&self, theta: &[f64]) -> f64 {
        dot(&self.center, theta) + self.radius * norm(theta)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `{x : ½ (x - x̄)ᵀ A (x - x̄) < R}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    /// row-major symmetric positive-definite matrix
    pub a: Vec<f64>,
    pub level: f64,
    /// eigenvalues of `A`, ascending
    eigenvalues: Vec<f64>,
    /// eigenvectors as rows, matching `eigenvalues`
    frame: Vec<f64>,
}

impl Ellipsoid {
    pub fn new(center: Vec<f64>, a: &DMatrix<f64>, level: f64) -> Result<Self> {
        let n = center.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(invalid("ellipsoid matrix shape does not match its center"));
        }
        if !(level > 0.0) {
            return Err(invalid(format!("ellipsoid level must be positive, got {level}")));
        }
        let (vals, vecs) = spd_eigen(a)?;
        let mut frame = Vec::with_capacity(n * n);
        for j in 0..n {
            frame.extend(vecs.column(j).iter());
        }
        Ok(Self {
            center,
            a: a.transpose().iter().copied().collect(),
            level,
            eigenvalues: vals,
            frame,
        })
    }

    pub fn diagonal(center: Vec<f64>, diag: &[f64], level: f64) -> Result<Self> {
        Self::new(center, &DMatrix::from_diagonal(&DVector::from_column_slice(diag)), level)
    }

    /// `E_R(0)` for the matrix of `spec`.
    pub fn of_spec(spec: &SymSpec, level: f64) -> Result<Self> {
        Self::diagonal(vec![0.0; spec.n], &spec.a, level)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `½ (x - x̄)ᵀ A (x - x̄)`.
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            let di = x[i] - self.center[i];
            for j in 0..n {
                acc += di * self.a[i * n + j] * (x[j] - self.center[j]);
            }
        }
        0.5 * acc
    }

    pub fn semi_axes(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (2.0 * self.level / l).sqrt()).collect()
    }

    /// Exact Euclidean distance outside; inside only the sign is meaningful.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let axes = self.semi_axes();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| self.frame[i * n + j] * (x[j] - self.center[j]))
                    .sum::<f64>()
                    .abs()
            })
            .collect();
        let q = self.quadratic(x) / self.level;
        if q <= 1.0 {
            let e_min = axes.iter().copied().fold(f64::INFINITY, f64::min);
            return (q.sqrt() - 1.0) * e_min;
        }
        // nearest point p_i = e_i² y_i / (τ + e_i²) with Σ (p_i/e_i)² = 1, τ > 0
        let f = |tau: f64| -> f64 {
            axes.iter()
                .zip(&y)
                .map(|(e, yi)| (e * yi / (tau + e * e)).powi(2))
                .sum::<f64>()
                - 1.0
        };
        let mut lo = 0.0;
        let mut hi = axes.iter().zip(&y).map(|(e, yi)| e * yi).fold(0.0, f64::max) + 1.0;
        while f(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let tau = 0.5 * (lo + hi);
        axes.iter()
            .zip(&y)
            .map(|(e, yi)| {
                let p = e * e * yi / (tau + e * e);
                (yi - p) * (yi - p)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `x̄·θ + √(2R θᵀA⁻¹θ)`.
    pub fn support(&self, theta: &[f64]) -> f64 {
        let n = self.dim();
        let mut quad = 0.0;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            let c: f64 = (0..n).map(|j| self.frame[i * n + j] * theta[j]).sum();
            quad += c * c / l;
        }
        dot(&self.center, theta) + (2.0 * self.level * quad).sqrt()
    }
}

fn spd_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * (1.0 + a[(i, j)].abs()) {
                return Err(invalid("matrix is not symmetric"));
            }
        }
    }
    let sym = 0.5 * (a + a.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if vals.iter().any(|&l| !(l > 0.0)) {
        return Err(invalid("matrix is not positive definite"));
    }
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// A convex body containing the origin, given by a level function that is
/// negative inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexBody {
    Ball(Ball),
    Ellipsoid(Ellipsoid),
    /// `(1-t) ball + t ellipsoid`
    Minkowski { ball: Ball, ellipsoid: Ellipsoid, t: f64 },
}

impl ConvexBody {
    pub fn dim(&self) -> usize {
        match self {
            ConvexBody::Ball(b) => b.center.len(),
            ConvexBody::Ellipsoid(e) => e.dim(),
            ConvexBody::Minkowski { ball, .. } => ball.center.len(),
        }
    }

    pub fn level(&self, x: &[f64]) -> f64 {
        match self {
            ConvexBody::Ball(b) => b.signed_distance(x),
            ConvexBody::Ellipsoid(e) => e.signed_distance(x),
            ConvexBody::Minkowski { ball, ellipsoid, t } => {
                let t = *t;
                if t == 0.0 {
                    return ball.signed_distance(x);
                }
                // a ball plus a convex set is the parallel body of the set
                let y: Vec<f64> = x
                    .iter()
                    .zip(&ball.center)
                    .map(|(xi, ci)| (xi - (1.0 - t) * ci) / t)
                    .collect();
                t * ellipsoid.signed_distance(&y) - (1.0 - t) * ball.radius
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.level(x) < 0.0
    }

    pub fn support(&self, theta: &[f64]) -> f64 {
        match self {
            ConvexBody::Ball(b) => b.support(theta),
            ConvexBody::Ellipsoid(e) => e.support(theta),
            ConvexBody::Minkowski { ball, ellipsoid, t } => {
                (1.0 - t) * ball.support(theta) + t * ellipsoid.support(theta)
            }
        }
    }

    /// Radii `r <= R` with `B_r(0) ⊂ body ⊂ B_R(0)`, from the support
    /// function (outer) and the level function (inner) along sampled
    /// directions.
    pub fn sandwich_radii(&self) -> (f64, f64) {
        let n = self.dim();
        let dirs = sample_directions(n, 48);
        let outer = dirs.iter().map(|d| self.support(d)).fold(0.0, f64::max);
        let inner = dirs
            .iter()
            .map(|d| {
                let (mut lo, mut hi) = (0.0, outer * 1.01 + 1e-12);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let p: Vec<f64> = d.iter().map(|v| v * mid).collect();
                    if self.contains(&p) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            })
            .fold(f64::INFINITY, f64::min);
        (inner, outer)
    }

    /// Whether the body is a solid of revolution about coordinate `axis`.
    pub fn axisymmetric_about(&self, axis: usize) -> bool {
        let ball_ok = |b: &Ball| b.center.iter().enumerate().all(|(i, c)| i == axis || *c == 0.0);
        let ell_ok = |e: &Ellipsoid| {
            let n = e.dim();
            let others: Vec<usize> = (0..n).filter(|&i| i != axis).collect();
            let center_ok = e.center.iter().enumerate().all(|(i, c)| i == axis || *c == 0.0);
            let diag_ok = (0..n).all(|i| (0..n).all(|j| i == j || e.a[i * n + j] == 0.0));
            let equal = others.windows(2).all(|w| e.a[w[0] * n + w[0]] == e.a[w[1] * n + w[1]]);
            center_ok && diag_ok && equal
        };
        match self {
            ConvexBody::Ball(b) => ball_ok(b),
            ConvexBody::Ellipsoid(e) => ell_ok(e),
            ConvexBody::Minkowski { ball, ellipsoid, .. } => ball_ok(ball) && ell_ok(ellipsoid),
        }
    }
}

/// `(1-t) Ω0 + t Ω1` for a ball and an ellipsoid.
pub fn minkowski_interpolant(omega0: &Ball, omega1: &Ellipsoid, t: f64) -> Result<ConvexBody> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("t must lie in [0, 1], got {t}")));
    }
    let origin = vec![0.0; omega0.center.len()];
    if omega0.signed_distance(&origin) >= 0.0 || omega1.signed_distance(&origin) >= 0.0 {
        return Err(invalid("both bodies must contain the origin"));
    }
    Ok(ConvexBody::Minkowski {
        ball: omega0.clone(),
        ellipsoid: omega1.clone(),
        t,
    })
}

/// Roughly uniform unit directions (deterministic).
pub fn sample_directions(n: usize, per_angle: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    match n {
        2 => {
            for i in 0..per_angle {
                let a = 2.0 * std::f64::consts::PI * i as f64 / per_angle as f64;
                out.push(vec![a.cos(), a.sin()]);
            }
        }
        _ => {
            // Fibonacci lattice in the first three coordinates, plus the axes
            let m = per_angle * per_angle;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for i in 0..m {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                let mut d = vec![0.0; n];
                d[0] = r * phi.cos();
                d[1] = r * phi.sin();
                d[2] = z;
                out.push(d);
            }
            for i in 0..n {
                for s in [-1.0, 1.0] {
                    let mut d = vec![0.0; n];
                    d[i] = s;
                    out.push(d);
                }
            }
        }
    }
    out
}

/// Change of variables `x̂ = P (x - y0)` reducing
/// `½ xᵀAx + b·x + c` to `½ x̂ᵀΛx̂ + ĉ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedProblem {
    /// diagonal of `Λ`, descending
    pub lambda: Vec<f64>,
    /// row-major orthogonal `P` with `PᵀΛP = A`
    pub p: Vec<f64>,
    pub y0: Vec<f64>,
    pub c_hat: f64,
}

impl NormalizedProblem {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    fn p_mat(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_row_slice(n, n, &self.p)
    }

    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.y0).map(|(a, b)| a - b).collect();
        (self.p_mat() * DVector::from_vec(d)).iter().copied().collect()
    }

    pub fn from_normalized(&self, xh: &[f64]) -> Vec<f64> {
        let v = self.p_mat().transpose() * DVector::from_column_slice(xh);
        v.iter().zip(&self.y0).map(|(a, b)| a + b).collect()
    }

    /// `½ x̂ᵀΛx̂ + ĉ`.
    pub fn quadratic(&self, xh: &[f64]) -> f64 {
        0.5 * xh.iter().zip(&self.lambda).map(|(x, l)| l * x * x).sum::<f64>() + self.c_hat
    }

    pub fn reconstructed(&self) -> DMatrix<f64> {
        let p = self.p_mat();
        p.transpose() * DMatrix::from_diagonal(&DVector::from_column_slice(&self.lambda)) * p
    }
}

pub fn normalize_problem(a: &DMatrix<f64>, b: &[f64], c: f64) -> Result<NormalizedProblem> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(invalid("shapes of A and b disagree"));
    }
    let (vals, vecs) = spd_eigen(a)?;
    // descending order, with each eigenvector's largest entry positive
    let mut lambda = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n * n);
    for j in (0..n).rev() {
        lambda.push(vals[j]);
        let col = vecs.column(j);
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        p.extend(col.iter().map(|v| sign * v));
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| invalid("matrix is not positive definite"))?;
    let ainv_b = chol.solve(&DVector::from_column_slice(b));
    let y0: Vec<f64> = ainv_b.iter().map(|v| -v).collect();
    let c_hat = c - 0.5 * dot(b, ainv_b.as_slice());
    Ok(NormalizedProblem { lambda, p, y0, c_hat })
}

/// Node spacing law for graded axes: `core` on `[core_lo, core_hi]`, and
/// near each focus `(position, h)`, growing linearly with distance at
/// rate `growth - 1` (a geometric progression of cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub core: f64,
    pub core_lo: f64,
    pub core_hi: f64,
    pub growth: f64,
    pub foci: Vec<(f64, f64)>,
}

impl Spacing {
    pub fn uniform(h: f64) -> Self {
        Self {
            core: h,
            core_lo: f64::NEG_INFINITY,
            core_hi: f64::INFINITY,
            growth: 1.0,
            foci: Vec::new(),
        }
    }

    pub fn at(&self, x: f64) -> f64 {
        let g = self.growth - 1.0;
        let outside = if x < self.core_lo {
            self.core_lo - x
        } else if x > self.core_hi {
            x - self.core_hi
        } else {
            0.0
        };
        let mut h = self.core + g * outside;
        for &(f, hf) in &self.foci {
            h = h.min(hf + g * (x - f).abs());
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub coords: Vec<f64>,
}

impl Axis {
    /// Nodes marched out of `anchor` until `[lo, hi]` is covered; two
    /// axes built from the same law share every node they have in common.
    pub fn graded(lo: f64, hi: f64, anchor: f64, spacing: &Spacing) -> Result<Self> {
        if !(lo <= anchor && anchor <= hi) {
            return Err(invalid(format!("anchor {anchor} outside [{lo}, {hi}]")));
        }
        if !(spacing.core > 0.0) || spacing.growth < 1.0 || spacing.foci.iter().any(|f| !(f.1 > 0.0)) {
            return Err(invalid("spacing must be positive with growth >= 1"));
        }
        const MAX_NODES: usize = 1 << 22;
        let mut up = vec![anchor];
        while *up.last().unwrap() < hi - 1e-12 * hi.abs().max(1.0) {
            let x = *up.last().unwrap();
            // midpoint rule on the spacing law keeps clustering symmetric
            let h0 = spacing.at(x);
            up.push(x + spacing.at(x + 0.5 * h0));
            if up.len() > MAX_NODES {
                return Err(invalid("graded axis has too many nodes"));
            }
        }
        let mut down = Vec::new();
        let mut x = anchor;
        while x > lo + 1e-12 * lo.abs().max(1.0) {
            let h0 = spacing.at(x);
            x -= spacing.at(x - 0.5 * h0);
            down.push(x);
            if down.len() > MAX_NODES {
                return Err(invalid("graded axis has too many nodes"));
            }
        }
        down.reverse();
        down.extend(up);
        Ok(Self { coords: down })
    }

    pub fn uniform(lo: f64, hi: f64, anchor: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(invalid("spacing must be positive"));
        }
        let below = ((anchor - lo) / h - 1e-9).ceil().max(0.0) as i64;
        let above = ((hi - anchor) / h - 1e-9).ceil().max(0.0) as i64;
        Ok(Self {
            coords: (-below..=above).map(|i| anchor + i as f64 * h).collect(),
        })
    }

    /// Midpoints inserted into every cell.
    pub fn refined(&self) -> Self {
        let mut c = Vec::with_capacity(2 * self.coords.len());
        for w in self.coords.windows(2) {
            c.push(w[0]);
            c.push(0.5 * (w[0] + w[1]));
        }
        c.push(*self.coords.last().unwrap());
        Self { coords: c }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn max_spacing(&self) -> f64 {
        self.coords.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        self.coords.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Index of the cell `[c_i, c_{i+1}]` containing `x`, clamped.
    pub fn cell(&self, x: f64) -> usize {
        let c = &self.coords;
        match c.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(c.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(c.len() - 2),
        }
    }

    /// Exact index of a coordinate, if it is a node.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        self.coords.binary_search_by(|v| v.total_cmp(&x)).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GridMode {
    Full,
    /// meridian-plane `(ρ, z)` grid; `axis` is the physical symmetry axis
    Axisym { axis: usize },
}

/// A tensor grid, either over all `n` coordinates or over `(ρ, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub mode: GridMode,
    pub axes: Vec<Axis>,
    strides: Vec<usize>,
}

/// Neighbor of a node along a grid axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub node: usize,
    /// signed coordinate offset
    pub offset: f64,
}

impl Grid {
    pub fn new(n: usize, mode: GridMode, axes: Vec<Axis>) -> Result<Self> {
        let want = match mode {
            GridMode::Full => n,
            GridMode::Axisym { axis } => {
                if axis >= n {
                    return Err(invalid("symmetry axis out of range"));
                }
                2
            }
        };
        if axes.len() != want {
            return Err(invalid(format!("grid needs {want} axes, got {}", axes.len())));
        }
        if axes.iter().any(|a| a.len() < 3) {
            return Err(invalid("every grid axis needs at least 3 nodes"));
        }
        if matches!(mode, GridMode::Axisym { .. }) && axes[0].coords[0] != 0.0 {
            return Err(invalid("the radial axis must start at 0"));
        }
        let mut strides = vec![1; axes.len()];
        for d in (0..axes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].len();
        }
        Ok(Self { n, mode, axes, strides })
    }

    pub fn grid_dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_axisym(&self) -> bool {
        matches!(self.mode, GridMode::Axisym { .. })
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(s, a)| (node / s) % a.len())
            .collect()
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Grid coordinates of a node (`(ρ, z)` in axisymmetric mode).
    pub fn coords(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coords[i])
            .collect()
    }

    /// Physical point of grid coordinates.
    pub fn to_physical(&self, gc: &[f64]) -> Vec<f64> {
        match self.mode {
            GridMode::Full => gc.to_vec(),
            GridMode::Axisym { axis } => {
                let mut p = vec![0.0; self.n];
                p[axis] = gc[1];
                p[if axis == 0 { 1 } else { 0 }] = gc[0];
                p
            }
        }
    }

    /// Grid coordinates of a physical point.
    pub fn to_grid(&self, x: &[f64]) -> Vec<f64> {
        match self.mode {
            GridMode::Full => x.to_vec(),
            GridMode::Axisym { axis } => {
                let rho = x
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != axis)
                    .map(|(_, v)| v * v)
                    .sum::<f64>()
                    .sqrt();
                vec![rho, x[axis]]
            }
        }
    }

    pub fn point(&self, node: usize) -> Vec<f64> {
        self.to_physical(&self.coords(node))
    }

    /// Neighbor along grid axis `d` in direction `dir = ±1`; the radial axis
    /// is continued evenly through `ρ = 0`.
    pub fn neighbor(&self, node: usize, d: usize, dir: i32) -> Option<Neighbor> {
        let a = &self.axes[d];
        let i = (node / self.strides[d]) % a.len();
        let base = node - i * self.strides[d];
        if dir > 0 {
            (i + 1 < a.len()).then(|| Neighbor {
                node: base + (i + 1) * self.strides[d],
                offset: a.coords[i + 1] - a.coords[i],
            })
        } else if i > 0 {
            Some(Neighbor {
                node: base + (i - 1) * self.strides[d],
                offset: a.coords[i - 1] - a.coords[i],
            })
        } else if self.is_axisym() && d == 0 {
            Some(Neighbor {
                node: base + self.strides[d],
                offset: -a.coords[1],
            })
        } else {
            None
        }
    }

    /// A grid with every cell bisected along every axis.
    pub fn refined(&self) -> Self {
        Self::new(self.n, self.mode, self.axes.iter().map(Axis::refined).collect()).expect("refinement keeps validity")
    }

    /// Node of this grid at the same grid coordinates, if any.
    pub fn find_node(&self, gc: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(gc.len());
        for (a, &c) in self.axes.iter().zip(gc) {
            idx.push(a.index_of(c)?);
        }
        Some(self.index(&idx))
    }

    /// Node closest to the given grid coordinates.
    pub fn nearest_node(&self, gc: &[f64]) -> usize {
        let idx: Vec<usize> = self
            .axes
            .iter()
            .zip(gc)
            .map(|(a, &c)| {
                let i = a.cell(c);
                if (c - a.coords[i]).abs() <= (a.coords[i + 1] - c).abs() {
                    i
                } else {
                    i + 1
                }
            })
            .collect();
        self.index(&idx)
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            mode: self.mode,
            nodes_per_axis: self.axes.iter().map(Axis::len).collect(),
            extents: self
                .axes
                .iter()
                .map(|a| (a.coords[0], *a.coords.last().unwrap()))
                .collect(),
            min_spacing: self.axes.iter().map(Axis::min_spacing).fold(f64::INFINITY, f64::min),
            max_spacing: self.axes.iter().map(Axis::max_spacing).fold(0.0, f64::max),
            nodes: self.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub mode: GridMode,
    pub nodes_per_axis: Vec<usize>,
    pub extents: Vec<(f64, f64)>,
    pub min_spacing: f64,
    pub max_spacing: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Interior,
    InnerAdjacent,
    OuterAdjacent,
    Exterior,
    Obstacle,
}

impl NodeClass {
    pub fn is_active(self) -> bool {
        matches!(self, NodeClass::Interior | NodeClass::InnerAdjacent | NodeClass::OuterAdjacent)
    }
}

/// A region between an inner obstacle and an outer body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub inner: ConvexBody,
    pub outer: ConvexBody,
}

impl Annulus {
    pub fn in_obstacle(&self, x: &[f64]) -> bool {
        self.inner.level(x) <= 0.0
    }

    pub fn outside(&self, x: &[f64]) -> bool {
        self.outer.level(x) >= 0.0
    }
}

/// Labels every node; fails when an active node sits on the grid edge or
/// when a node is adjacent to both boundaries.
pub fn classify(grid: &Grid, region: &Annulus) -> Result<Vec<NodeClass>> {
    let raw: Vec<NodeClass> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.point(i);
            if region.in_obstacle(&p) {
                NodeClass::Obstacle
            } else if region.outside(&p) {
                NodeClass::Exterior
            } else {
                NodeClass::Interior
            }
        })
        .collect();
    let labels: Vec<Result<NodeClass>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if raw[i] != NodeClass::Interior {
                return Ok(raw[i]);
            }
            let (mut inner, mut outer) = (false, false);
            for d in 0..grid.grid_dim() {
                for dir in [-1, 1] {
                    match grid.neighbor(i, d, dir) {
                        None => {
                            return Err(invalid(format!(
                                "grid does not cover the domain near {:?}",
                                grid.point(i)
                            )))
                        }
                        Some(nb) => match raw[nb.node] {
                            NodeClass::Obstacle => inner = true,
                            NodeClass::Exterior => outer = true,
                            _ => {}
                        },
                    }
                }
            }
            match (inner, outer) {
                (true, true) => Err(LabError::DomainTooTight(format!(
                    "node {:?} touches both boundaries",
                    grid.point(i)
                ))),
                (true, false) => Ok(NodeClass::InnerAdjacent),
                (false, true) => Ok(NodeClass::OuterAdjacent),
                _ => Ok(NodeClass::Interior),
            }
        })
        .collect();
    let labels: Vec<NodeClass> = labels.into_iter().collect::<Result<_>>()?;
    if !labels.iter().any(|c| *c == NodeClass::Interior) {
        return Err(LabError::DomainTooTight("no interior nodes".into()));
    }
    Ok(labels)
}

/// `E_R(0) \ B̄_ε(x0)` on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RingDomain {
    pub inner: Ball,
    pub outer: Ellipsoid,
    pub grid: Grid,
    pub classes: Vec<NodeClass>,
}

/// Which of the standing assumptions a ring must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingChecks {
    /// require `x0 ∈ B_{1/2}(0) \ {0}` and `0 < ε < 1/2`
    pub standing_x0: bool,
    /// require `R > 3 R0` for this `R0`
    pub r0: Option<f64>,
}

impl RingDomain {
    pub fn new(inner: Ball, outer: Ellipsoid, grid: Grid, checks: RingChecks) -> Result<Self> {
        let n = outer.dim();
        if inner.center.len() != n || grid.n != n {
            return Err(invalid("ring dimensions disagree"));
        }
        let eps = inner.radius;
        if checks.standing_x0 {
            let r = norm(&inner.center);
            if !(r > 0.0 && r < 0.5) {
                return Err(invalid(format!("x0 must lie in B_1/2(0) minus the origin, |x0| = {r}")));
            }
            if !(eps > 0.0 && eps < 0.5) {
                return Err(invalid(format!("eps must lie in (0, 1/2), got {eps}")));
            }
        }
        if let Some(r0) = checks.r0 {
            if !(outer.level > 3.0 * r0) {
                return Err(invalid(format!("R = {} must exceed 3 R0 = {}", outer.level, 3.0 * r0)));
            }
        }
        // B̄_ε(x0) strictly inside E_R, separated by four cells; the cells
        // that matter are those around the nearest outer boundary point
        let gap = -outer.signed_distance(&inner.center) - eps;
        let h = grid.axes.iter().map(Axis::max_spacing).fold(0.0, f64::max);
        let h_near = local_spacing(&grid, &inner.center, eps + gap.max(0.0)).min(h);
        if gap < 4.0 * h_near {
            return Err(LabError::DomainTooTight(format!(
                "inner ball within four cells of the outer boundary (gap {gap:.3e}, cell {h_near:.3e})"
            )));
        }
        let region = Annulus {
            inner: ConvexBody::Ball(inner.clone()),
            outer: ConvexBody::Ellipsoid(outer.clone()),
        };
        let classes = classify(&grid, &region)?;
        Ok(Self {
            inner,
            outer,
            grid,
            classes,
        })
    }

    pub fn annulus(&self) -> Annulus {
        Annulus {
            inner: ConvexBody::Ball(self.inner.clone()),
            outer: ConvexBody::Ellipsoid(self.outer.clone()),
        }
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }

    /// Same geometry on the refined grid.
    pub fn refined(&self) -> Result<Self> {
        let grid = self.grid.refined();
        let region = self.annulus();
        let classes = classify(&grid, &region)?;
        Ok(Self {
            inner: self.inner.clone(),
            outer: self.outer.clone(),
            grid,
            classes,
        })
    }

    /// Reclassified onto another grid.
    pub fn with_grid(&self, grid: Grid) -> Result<Self> {
        let classes = classify(&grid, &self.annulus())?;
        Ok(Self {
            inner: self.inner.clone(),
            outer: self.outer.clone(),
            grid,
            classes,
        })
    }
}

/// Largest cell spacing within `radius` of `x`.
fn local_spacing(grid: &Grid, x: &[f64], radius: f64) -> f64 {
    let gc = grid.to_grid(x);
    grid.axes
        .iter()
        .zip(&gc)
        .map(|(a, &c)| {
            let lo = a.cell(c - radius);
            let hi = a.cell(c + radius);
            (lo..=hi).map(|i| a.coords[i + 1] - a.coords[i]).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Graded `(ρ, z)` or full grid covering a box, clustered at the given foci.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPlan {
    pub mode: GridMode,
    /// half-widths of the covered box per physical coordinate
    pub half_widths: Vec<f64>,
    /// core spacing and core box half-width
    pub core: f64,
    pub core_half_width: f64,
    pub growth: f64,
    /// physical points that need fine cells, with their spacing
    pub foci: Vec<(Vec<f64>, f64)>,
}

impl GridPlan {
    pub fn build(&self, n: usize) -> Result<Grid> {
        let spacing_for = |phys_axes: &[usize], radial: bool| -> Spacing {
            let mut foci = Vec::new();
            for (p, h) in &self.foci {
                let c = if radial {
                    phys_axes.iter().map(|&i| p[i] * p[i]).sum::<f64>().sqrt()
                } else {
                    p[phys_axes[0]]
                };
                foci.push((c, *h));
                if radial {
                    foci.push((-c, *h));
                }
            }
            Spacing {
                core: self.core,
                core_lo: -self.core_half_width,
                core_hi: self.core_half_width,
                growth: self.growth,
                foci,
            }
        };
        let axes = match self.mode {
            GridMode::Full => (0..n)
                .map(|d| {
                    let w = self.half_widths[d];
                    Axis::graded(-w, w, 0.0, &spacing_for(&[d], false))
                })
                .collect::<Result<Vec<_>>>()?,
            GridMode::Axisym { axis } => {
                let others: Vec<usize> = (0..n).filter(|&i| i != axis).collect();
                let wr = others.iter().map(|&i| self.half_widths[i]).fold(0.0, f64::max);
                let wz = self.half_widths[axis];
                vec![
                    Axis::graded(0.0, wr, 0.0, &spacing_for(&others, true))?,
                    Axis::graded(-wz, wz, 0.0, &spacing_for(&[axis], false))?,
                ]
            }
        };
        Grid::new(n, self.mode, axes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::RngExt;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &m * m.transpose() + DMatrix::identity(n, n) * 0.3
    }

    #[test]
    fn normalize_examples() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.4, 0.4]));
        let np = normalize_problem(&a, &[0.0; 3], 1.5).unwrap();
        assert_eq!(np.y0, vec![0.0; 3]);
        assert_eq!(np.c_hat, 1.5);
        assert_eq!(np.lambda, vec![0.4, 0.4, 0.2]);
        let np = normalize_problem(&DMatrix::identity(3, 3), &[1.0, 0.0, 0.0], 1.0).unwrap();
        assert!((np.y0[0] + 1.0).abs() < 1e-15 && np.y0[1] == 0.0);
        assert!((np.c_hat - 0.5).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(normalize_problem(&bad, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn normalize_round_trip_and_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 3..=5 {
            let a = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let c = 0.7;
            let np = normalize_problem(&a, &b, c).unwrap();
            assert!((np.reconstructed() - &a).abs().max() < 1e-10);
            for k in 1..=n {
                let sa = crate::symcore::sk_of_hessian(&a, k).unwrap().value;
                let sl = crate::symcore::elem_sym(&np.lambda, k).unwrap();
                assert!((sa - sl).abs() < 1e-10 * sa.abs().max(1.0));
            }
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
                let back = np.from_normalized(&np.to_normalized(&x));
                assert!(x.iter().zip(&back).all(|(p, q)| (p - q).abs() < 1e-12));
                let xv = DVector::from_column_slice(&x);
                let orig = 0.5 * (xv.transpose() * &a * &xv)[0] + dot(&b, &x) + c;
                assert!((orig - np.quadratic(&np.to_normalized(&x))).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ellipsoid_distance_and_support() {
        let e = Ellipsoid::diagonal(vec![0.0; 3], &[2.0, 2.0, 2.0 / 2.25], 1.0).unwrap();
        let axes = e.semi_axes();
        assert!((axes[0] - 1.5).abs() < 1e-12 && (axes[2] - 1.0).abs() < 1e-12);
        assert!((e.signed_distance(&[3.0, 0.0, 0.0]) - 2.0).abs() < 1e-10);
        assert!((e.signed_distance(&[0.0, 0.0, 4.0]) - 2.5).abs() < 1e-10);
        assert!(e.signed_distance(&[0.1, 0.2, 0.3]) < 0.0);
        assert!((e.support(&[0.0, 0.0, 1.0]) - 1.5).abs() < 1e-12);
        assert!((e.support(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        // distance of an outside point equals min over a dense boundary sample
        let p = [1.3, -0.4, 1.9];
        let mut best = f64::INFINITY;
        for i in 0..400 {
            for j in 0..400 {
                let th = std::f64::consts::PI * (i as f64 + 0.5) / 400.0;
                let ph = 2.0 * std::f64::consts::PI * j as f64 / 400.0;
                let q = [th.sin() * ph.cos(), th.sin() * ph.sin(), 1.5 * th.cos()];
                best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
            }
        }
        assert!((e.signed_distance(&p) - best).abs() < 1e-4);
    }

    #[test]
    fn minkowski_examples() {
        let b0 = Ball::new(vec![0.0; 3], 1.0).unwrap();
        let e1 = Ellipsoid::diagonal(vec![0.0; 3], &[2.0, 2.0, 2.0 / 2.25], 1.0).unwrap();
        let m0 = minkowski_interpolant(&b0, &e1, 0.0).unwrap();
        let m1 = minkowski_interpolant(&b0, &e1, 1.0).unwrap();
        for x in [[1.2, 0.0, 0.0], [0.0, 0.0, 1.4], [0.5, 0.6, 0.9]] {
            assert!((m0.level(&x) - b0.signed_distance(&x)).abs() < 1e-12);
            assert_eq!(m1.contains(&x), e1.signed_distance(&x) < 0.0);
        }
        // two balls: the interpolant of radii r and R is the ball of radius (1-t)r + tR
        let big = Ellipsoid::diagonal(vec![0.0; 3], &[1.0; 3], 2.0).unwrap();
        let mt = minkowski_interpolant(&b0, &big, 0.25).unwrap();
        let r = 0.75 + 0.25 * 2.0;
        assert!(mt.level(&[r, 0.0, 0.0]).abs() < 1e-10);
        assert!(mt.level(&[0.0, 0.6 * r, 0.8 * r]).abs() < 1e-10);
        assert!((mt.support(&[0.0, 1.0, 0.0]) - r).abs() < 1e-12);
        assert!(mt.axisymmetric_about(2));
        let (lo, hi) = minkowski_interpolant(&b0, &e1, 1.0).unwrap().sandwich_radii();
        assert!((lo - 1.0).abs() < 1e-6 && (hi - 1.5).abs() < 1e-9);
    }

    #[test]
    fn graded_axes_share_nodes() {
        let sp = Spacing {
            core: 0.05,
            core_lo: -1.0,
            core_hi: 1.0,
            growth: 1.2,
            foci: vec![(0.45, 1e-4)],
        };
        let a = Axis::graded(-10.0, 10.0, 0.0, &sp).unwrap();
        let b = Axis::graded(-20.0, 30.0, 0.0, &sp).unwrap();
        for c in &a.coords[1..a.len() - 1] {
            assert!(b.index_of(*c).is_some());
        }
        assert!(a.coords.windows(2).all(|w| w[1] > w[0]));
        let near = a.coords[a.cell(0.45)];
        assert!((a.coords[a.cell(0.45) + 1] - near) < 2e-4);
        assert!(a.max_spacing() > 1.0);
        let r = a.refined();
        assert_eq!(r.len(), 2 * a.len() - 1);
        assert!(a.coords.iter().all(|c| r.index_of(*c).is_some()));
        let u = Axis::uniform(-1.0, 1.0, 0.0, 0.25).unwrap();
        assert_eq!(u.len(), 9);
    }

    #[test]
    fn grid_neighbors_and_mirror() {
        let g = Grid::new(
            3,
            GridMode::Axisym { axis: 2 },
            vec![Axis::uniform(0.0, 1.0, 0.0, 0.25).unwrap(), Axis::uniform(-1.0, 1.0, 0.0, 0.5).unwrap()],
        )
        .unwrap();
        let node = g.index(&[0, 2]);
        let m = g.neighbor(node, 0, -1).unwrap();
        assert_eq!(m.node, g.index(&[1, 2]));
        assert_eq!(m.offset, -0.25);
        assert_eq!(g.point(g.index(&[2, 3])), vec![0.5, 0.0, 0.5]);
        assert_eq!(g.to_grid(&[0.3, 0.4, 0.7]), vec![0.5, 0.7]);
        assert!(g.neighbor(g.index(&[4, 0]), 0, 1).is_none());
    }

    fn default_ring(h: f64) -> Result<RingDomain> {
        let spec = SymSpec::normalized(1, &[0.4, 0.4, 0.2]).unwrap();
        let outer = Ellipsoid::of_spec(&spec, 3.0).unwrap();
        let inner = Ball::new(vec![0.0, 0.0, 0.45], 0.1).unwrap();
        let axes = vec![Axis::uniform(0.0, 4.0, 0.0, h)?, Axis::uniform(-6.0, 6.0, 0.0, h)?];
        let grid = Grid::new(3, GridMode::Axisym { axis: 2 }, axes)?;
        RingDomain::new(inner, outer, grid, RingChecks { standing_x0: true, r0: None })
    }

    #[test]
    fn ring_classification() {
        let ring = default_ring(0.05).unwrap();
        let g = &ring.grid;
        let at_x0 = g.nearest_node(&[0.0, 0.45]);
        assert_eq!(ring.classes[at_x0], NodeClass::Obstacle);
        let far = g.nearest_node(&[3.9, 5.5]);
        assert_eq!(ring.classes[far], NodeClass::Exterior);
        assert!(ring.count(NodeClass::Interior) > 0);
        assert!(ring.count(NodeClass::InnerAdjacent) > 0 && ring.count(NodeClass::OuterAdjacent) > 0);
        // labels never flip from interior to exterior under refinement
        let fine = ring.refined().unwrap();
        for i in 0..g.len() {
            let j = fine.grid.find_node(&g.coords(i)).unwrap();
            let (a, b) = (ring.classes[i], fine.classes[j]);
            assert!(!(a.is_active() && !b.is_active()) && !(!a.is_active() && b.is_active()));
        }
        // too coarse for the four-cell separation or standing assumptions violated
        let spec = SymSpec::normalized(1, &[0.4, 0.4, 0.2]).unwrap();
        let grid = default_ring(0.05).unwrap().grid;
        let bad = RingDomain::new(
            Ball::new(vec![0.0; 3], 0.1).unwrap(),
            Ellipsoid::of_spec(&spec, 3.0).unwrap(),
            grid.clone(),
            RingChecks { standing_x0: true, r0: None },
        );
        assert!(bad.is_err());
        let tight = RingDomain::new(
            Ball::new(vec![0.0, 0.0, 0.45], 0.1).unwrap(),
            Ellipsoid::of_spec(&spec, 0.05).unwrap(),
            grid,
            RingChecks { standing_x0: false, r0: None },
        );
        assert!(matches!(tight, Err(LabError::DomainTooTight(_))));
    }

    proptest! {
        #[test]
        fn ellipsoid_level_sign_matches_quadratic(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let e = Ellipsoid::diagonal(vec![0.1, 0.0, -0.2], &[0.4, 0.4, 0.2], 0.5).unwrap();
            let p = [x, y, z];
            let q = e.quadratic(&p);
            prop_assume!((q - 0.5).abs() > 1e-9);
            prop_assert_eq!(e.signed_distance(&p) < 0.0, q < 0.5);
        }
    }
}
