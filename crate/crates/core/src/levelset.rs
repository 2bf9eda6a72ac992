//! Convexity of sub- and superlevel sets, the segment-midpoint witness,
//! Gaussian curvature of level sets and isocontours on slice planes.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::field::{GridField, Jet, ScalarField, SmoothField};
use crate::geometry::{GridMode, NodeClass};
use crate::symcore::SymSpec;

/// Which side of the level is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `{u <= t}`
    Sublevel,
    /// `{u >= t}`
    Superlevel,
}

impl Sense {
    /// How far `v` lies outside the set, positive meaning outside.
    fn excess(self, v: f64, t: f64) -> f64 {
        match self {
            Sense::Sublevel => v - t,
            Sense::Superlevel => t - v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ConvexUpToTol,
    NonConvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub m: Vec<f64>,
    pub u_p: f64,
    pub u_q: f64,
    pub u_m: f64,
    /// how far `u(m)` lies outside the level set
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub level: f64,
    pub sense: Sense,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// largest excess seen on any segment
    pub max_excess: f64,
    pub tol: f64,
    pub pairs_tested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerOptions {
    /// sampling box corners; `None` uses the unit box scaled by `half_width`
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub half_width: f64,
    pub candidates_per_axis: usize,
    pub pair_budget: usize,
    pub points_per_segment: usize,
    pub seed: u64,
    /// reflection pairs `(p, 2c - p)` are added for this center
    pub center: Option<Vec<f64>>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            lo: None,
            hi: None,
            half_width: 1.0,
            candidates_per_axis: 16,
            pair_budget: 20_000,
            points_per_segment: 65,
            seed: 0x5eed,
            center: None,
        }
    }
}

fn lerp(p: &[f64], q: &[f64], s: f64) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| a + s * (b - a)).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Worst excess along the open segment `(p, q)`: `(excess, point, value)`.
/// Largest `excess - 3 tol` along the open segment, with the raw excess,
/// point and value there.
fn segment_excess(
    field: &dyn ScalarField,
    sense: Sense,
    t: f64,
    tol_at: &(dyn Fn(&[f64]) -> f64 + Sync),
    p: &[f64],
    q: &[f64],
    points: usize,
) -> Option<(f64, f64, Vec<f64>, f64)> {
    let mut best: Option<(f64, f64, Vec<f64>, f64)> = None;
    for j in 1..points - 1 {
        let x = lerp(p, q, j as f64 / (points - 1) as f64);
        let v = field.value(&x)?;
        let e = sense.excess(v, t);
        let score = e - 3.0 * tol_at(&x);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, e, x, v));
        }
    }
    best
}

/// Sampled segment test of `{u <= t}` (or `{u >= t}`). Endpoints are drawn
/// from `tol` inside the set; the verdict is non-convex iff a segment point
/// lies more than `3 tol` outside.
pub fn sublevel_convexity_check(field: &dyn ScalarField, t: f64, sense: Sense, tol: f64, opts: &SamplerOptions) -> Result<ConvexityReport> {
    sublevel_convexity_check_local(field, t, sense, &|_| tol, opts)
}

/// [`sublevel_convexity_check`] with a pointwise error estimate: endpoints
/// sit `tol_at(p)` inside and a segment point `m` counts against convexity
/// once it is `3 tol_at(m)` outside. The report's `tol` is taken at the
/// decisive point.
pub fn sublevel_convexity_check_local(
    field: &dyn ScalarField,
    t: f64,
    sense: Sense,
    tol_at: &(dyn Fn(&[f64]) -> f64 + Sync),
    opts: &SamplerOptions,
) -> Result<ConvexityReport> {
    let n = field.dim();
    if opts.points_per_segment < 3 {
        return Err(invalid("need at least three points per segment"));
    }
    let lo = opts.lo.clone().unwrap_or_else(|| vec![-opts.half_width; n]);
    let hi = opts.hi.clone().unwrap_or_else(|| vec![opts.half_width; n]);
    if lo.len() != n || hi.len() != n {
        return Err(invalid("sampling box has the wrong dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let per = opts.candidates_per_axis.max(1);
    let cells = per.pow(n as u32);
    let raw: Vec<Vec<f64>> = (0..cells)
        .map(|c| {
            let mut idx = c;
            (0..n)
                .map(|d| {
                    let i = idx % per;
                    idx /= per;
                    let s = (i as f64 + rng.random::<f64>()) / per as f64;
                    lo[d] + s * (hi[d] - lo[d])
                })
                .collect()
        })
        .collect();
    let inside = |x: &[f64]| field.value(x).map(|v| sense.excess(v, t) <= -tol_at(x));
    let keep: Vec<bool> = raw.par_iter().map(|x| inside(x).unwrap_or(false)).collect();
    let cand: Vec<Vec<f64>> = raw.into_iter().zip(keep).filter(|(_, k)| *k).map(|(x, _)| x).collect();
    if cand.is_empty() {
        return Err(LabError::LevelOutOfRange {
            level: t,
            reason: "no sample lies inside the level set".into(),
        });
    }

    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    if let Some(c) = &opts.center {
        let quota = opts.pair_budget / 4;
        for p in &cand {
            if pairs.len() >= quota {
                break;
            }
            let q: Vec<f64> = p.iter().zip(c).map(|(a, b)| 2.0 * b - a).collect();
            if inside(&q) == Some(true) {
                pairs.push((p.clone(), q));
            }
        }
    }
    if cand.len() > 1 {
        while pairs.len() < opts.pair_budget {
            let i = rng.random_range(0..cand.len());
            let j = rng.random_range(0..cand.len());
            if i != j {
                pairs.push((cand[i].clone(), cand[j].clone()));
            }
        }
    }

    let results: Vec<Option<(f64, f64, Vec<f64>, f64)>> = pairs
        .par_iter()
        .map(|(p, q)| segment_excess(field, sense, t, tol_at, p, q, opts.points_per_segment))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    let mut tested = 0;
    for (i, r) in results.iter().enumerate() {
        if let Some((score, ..)) = r {
            tested += 1;
            if best.is_none_or(|b| *score > b.1) {
                best = Some((i, *score));
            }
        }
    }
    let decisive = best.map(|(i, _)| results[i].clone().expect("tested pair"));
    let max_excess = decisive.as_ref().map_or(f64::NEG_INFINITY, |d| d.1);
    let tol = decisive.as_ref().map_or(0.0, |d| tol_at(&d.2));
    let verdict = if best.is_some_and(|b| b.1 > 0.0) { Verdict::NonConvex } else { Verdict::ConvexUpToTol };
    let witness = match (verdict, best, decisive) {
        (Verdict::NonConvex, Some((i, _)), Some((_, e, m, um))) => {
            let (p, q) = &pairs[i];
            Some(Witness {
                p: p.clone(),
                q: q.clone(),
                m,
                u_p: field.value(p).unwrap_or(f64::NAN),
                u_q: field.value(q).unwrap_or(f64::NAN),
                u_m: um,
                margin: e,
            })
        }
        _ => None,
    };
    Ok(ConvexityReport {
        level: t,
        sense,
        verdict,
        witness,
        max_excess,
        tol,
        pairs_tested: tested,
    })
}

/// The targeted triple `p = 0`, `q` on the inner sphere nearest the
/// origin, `m = (p + q) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub report: ConvexityReport,
    /// `⅛ x0ᵀ A x0`
    pub predicted_gap: f64,
    pub measured_gap: f64,
    pub relative_error: f64,
}

/// Fails with `Inconclusive` when the measured gap is within `3 tol`.
/// `tol_at` gives the local discretization-error estimate.
pub fn counterexample_witness(
    field: &dyn ScalarField,
    spec: &SymSpec,
    x0: &[f64],
    eps: f64,
    tol_at: &dyn Fn(&[f64]) -> f64,
) -> Result<WitnessReport> {
    let n = field.dim();
    let r0 = norm(x0);
    let p = vec![0.0; n];
    if r0 <= eps {
        let tol = tol_at(&p);
        return Err(LabError::Inconclusive { gap: 0.0, threshold: 3.0 * tol });
    }
    let q: Vec<f64> = x0.iter().map(|v| v * (1.0 - eps / r0)).collect();
    let m = lerp(&p, &q, 0.5);
    let up = field.value(&p).ok_or_else(|| invalid("origin is off the grid"))?;
    // the Dirichlet condition pins ũ = 0 on the inner sphere
    let uq = 0.0;
    let um = field.value(&m).ok_or_else(|| invalid("midpoint is off the grid"))?;
    let t = up.max(uq);
    let gap = um - t;
    // ũ(q) is boundary data, exact by construction; only p and m carry error
    let tol = tol_at(&p).max(tol_at(&m));
    if gap <= 3.0 * tol {
        return Err(LabError::Inconclusive { gap, threshold: 3.0 * tol });
    }
    let predicted = 0.25 * spec.s_of(x0);
    Ok(WitnessReport {
        report: ConvexityReport {
            level: t,
            sense: Sense::Sublevel,
            verdict: Verdict::NonConvex,
            witness: Some(Witness {
                p,
                q,
                m,
                u_p: up,
                u_q: uq,
                u_m: um,
                margin: gap,
            }),
            max_excess: gap,
            tol,
            pairs_tested: 1,
        },
        predicted_gap: predicted,
        measured_gap: gap,
        relative_error: (gap - predicted).abs() / predicted,
    })
}

/// Cofactor matrix `adj(H)ᵀ`, which equals `∂ det H / ∂H`.
pub fn cofactor(h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(n, n, |i, j| {
        let minor = h.clone().remove_row(i).remove_column(j);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    })
}

pub const DEFAULT_GRAD_FLOOR: f64 = 1e-8;

/// `K = (-1)^{n-1} |Du|^{-(n+1)} Σ cof(D²u)_{αβ} u_α u_β` from a jet.
pub fn curvature_of_jet(jet: &Jet, grad_floor: f64) -> Result<(f64, f64)> {
    let g = &jet.grad;
    let gn = norm(g);
    if !(gn > grad_floor) {
        return Err(LabError::CriticalPoint { grad_norm: gn });
    }
    let n = g.len();
    let c = cofactor(&jet.hess);
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += c[(a, b)] * g[a] * g[b];
        }
    }
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    Ok((sign * s / gn.powi(n as i32 + 1), gn))
}

/// Gauss curvature of the level set through `x`, with `|Du(x)|`.
pub fn gaussian_curvature(field: &dyn SmoothField, x: &[f64], grad_floor: f64) -> Result<(f64, f64)> {
    curvature_of_jet(&field.jet(x)?, grad_floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub x: Vec<f64>,
    pub grad_norm: f64,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellCurvature {
    pub r: f64,
    /// weighted mean of `K r^{n-1}`
    pub mean_scaled: f64,
    /// `max |K r^{n-1} - 1|`
    pub max_dev: f64,
    pub min_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub samples: Vec<CurvatureSample>,
    pub shells: Vec<ShellCurvature>,
    /// `K ≈ k_constant r^{exponent}` over all samples
    pub exponent: f64,
    pub k_constant: f64,
    /// `K r^{n-1}` on the outermost shell
    pub limit: f64,
    /// log-log slope of the shell deviation from 1 against `r`
    pub remainder_slope: f64,
    pub min_k: f64,
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    (slope, (sy - slope * sx) / m)
}

/// Curvature on spheres of the given radii, sampled along `rule`
/// (directions with weights summing to one).
pub fn curvature_asymptotic_fit(field: &dyn SmoothField, radii: &[f64], rule: &[(Vec<f64>, f64)], grad_floor: f64) -> Result<CurvatureReport> {
    if radii.len() < 2 {
        return Err(invalid("need at least two shells"));
    }
    let n = field.dim();
    let mut samples = Vec::new();
    let mut shells = Vec::new();
    for &r in radii {
        let out: Vec<Result<CurvatureSample>> = rule
            .par_iter()
            .map(|(d, _)| {
                let x: Vec<f64> = d.iter().map(|v| v * r).collect();
                let (k, g) = gaussian_curvature(field, &x, grad_floor)?;
                Ok(CurvatureSample { x, grad_norm: g, k })
            })
            .collect();
        let out: Vec<CurvatureSample> = out
            .into_iter()
            .collect::<Result<_>>()
            .map_err(|e| LabError::AsymptoticsNotReached(format!("curvature on shell {r}: {e}")))?;
        let scale = r.powi(n as i32 - 1);
        let mean_scaled = out.iter().zip(rule).map(|(s, (_, w))| w * s.k * scale).sum();
        let max_dev = out.iter().map(|s| (s.k * scale - 1.0).abs()).fold(0.0, f64::max);
        let min_k = out.iter().map(|s| s.k).fold(f64::INFINITY, f64::min);
        shells.push(ShellCurvature { r, mean_scaled, max_dev, min_k });
        samples.extend(out);
    }
    let pos: Vec<&CurvatureSample> = samples.iter().filter(|s| s.k > 0.0).collect();
    if pos.len() < 2 {
        return Err(LabError::AsymptoticsNotReached("too few positive curvature samples".into()));
    }
    let lx: Vec<f64> = pos.iter().map(|s| norm(&s.x).ln()).collect();
    let ly: Vec<f64> = pos.iter().map(|s| s.k.ln()).collect();
    let (exponent, c) = linear_fit(&lx, &ly);
    let dev: Vec<(f64, f64)> = shells.iter().filter(|s| s.max_dev > 0.0).map(|s| (s.r.ln(), s.max_dev.ln())).collect();
    let remainder_slope = if dev.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = dev.into_iter().unzip();
        linear_fit(&x, &y).0
    } else {
        f64::NAN
    };
    let min_k = samples.iter().map(|s| s.k).fold(f64::INFINITY, f64::min);
    Ok(CurvatureReport {
        limit: shells.last().expect("two shells").mean_scaled,
        samples,
        shells,
        exponent,
        k_constant: c.exp(),
        remainder_slope,
        min_k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperharmonicReport {
    pub probes: usize,
    /// largest `Δ_h ψ`
    pub max_laplacian: f64,
    /// largest `Δ_h ψ - tol_lap`
    pub max_excess: f64,
    pub tol_lap_max: f64,
    /// node of the largest excess, with its `Δ_h ψ` and `tol_lap`
    pub worst_point: Vec<f64>,
    pub worst_laplacian: f64,
    pub worst_tol: f64,
    pub min_k: f64,
    pub passed: bool,
}

/// `ψ = (|Du|^{n-3} K)^{1/(n-1)}` at every node with a full stencil.
fn psi_ms(field: &GridField) -> Result<Vec<Option<f64>>> {
    let n = field.grid.n;
    let out: Vec<Result<Option<f64>>> = (0..field.grid.len())
        .into_par_iter()
        .map(|i| {
            if !field.is_active(i) {
                return Ok(None);
            }
            let Some(jet) = field.nodal_jet(i) else {
                return Ok(None);
            };
            let (k, g) = curvature_of_jet(&jet, DEFAULT_GRAD_FLOOR)?;
            if !(k > 0.0) {
                return Err(LabError::NonPositiveCurvature {
                    k,
                    point: field.grid.point(i),
                });
            }
            Ok(Some((g.powi(n as i32 - 3) * k).powf(1.0 / (n as f64 - 1.0))))
        })
        .collect();
    out.into_iter().collect()
}

/// Nodal Laplacian of nodal data; `None` unless the axis neighbors carry
/// values.
fn nodal_laplacian(field: &GridField, data: &[Option<f64>], i: usize) -> Option<f64> {
    let grid = &field.grid;
    let c = data[i]?;
    let mut lap = 0.0;
    for d in 0..grid.grid_dim() {
        let m = grid.neighbor(i, d, -1)?;
        let p = grid.neighbor(i, d, 1)?;
        let (um, up) = (data[m.node]?, data[p.node]?);
        let w = crate::field::fd_weights(0.0, &[m.offset, 0.0, p.offset], 2);
        let d2 = w[2][0] * um + w[2][1] * c + w[2][2] * up;
        lap += d2;
        if let (GridMode::Axisym { .. }, 0) = (grid.mode, d) {
            let rho = grid.coords(i)[0];
            let extra = (grid.n - 2) as f64;
            if rho == 0.0 {
                lap += extra * d2;
            } else {
                lap += extra * (w[1][0] * um + w[1][1] * c + w[1][2] * up) / rho;
            }
        }
    }
    Some(lap)
}

/// Safety factor on two-grid Richardson estimates (Roache's grid
/// convergence index convention).
pub const RICHARDSON_SAFETY: f64 = 1.25;

/// One-sided check `Δ_h ψ <= tol_lap` over active nodes accepted by
/// `probe`. With a refined solve, `tol_lap` is `RICHARDSON_SAFETY · 4/3
/// |Δψ_h - Δψ_{h/2}|` maximized over the node's 3^d coarse block, plus a
/// rounding floor. The block max keeps a chance coarse/fine agreement at
/// one node from hiding the local error. Without a refined solve only the
/// floor applies.
pub fn superharmonicity_check(coarse: &GridField, fine: Option<&GridField>, probe: &dyn Fn(&[f64]) -> bool) -> Result<SuperharmonicReport> {
    let psi_c = psi_ms(coarse)?;
    let psi_f = fine.map(psi_ms).transpose()?;
    let cg = &coarse.grid;
    let laps: Vec<Option<f64>> = (0..cg.len())
        .map(|i| if coarse.classes[i] == NodeClass::Interior { nodal_laplacian(coarse, &psi_c, i) } else { None })
        .collect();
    let est: Vec<Option<f64>> = match (fine, &psi_f) {
        (Some(ff), Some(pf)) => (0..cg.len())
            .map(|i| {
                let lap = laps[i]?;
                let idx: Vec<usize> = cg.multi_index(i).iter().map(|&j| 2 * j).collect();
                let lf = nodal_laplacian(ff, pf, ff.grid.index(&idx))?;
                Some(RICHARDSON_SAFETY * 4.0 / 3.0 * (lap - lf).abs())
            })
            .collect(),
        _ => vec![None; cg.len()],
    };
    let dim = cg.grid_dim();
    let block_max = |i: usize| -> f64 {
        let mi = cg.multi_index(i);
        let mut best = 0.0f64;
        for code in 0..3usize.pow(dim as u32) {
            let mut c = code;
            let mut idx = Vec::with_capacity(dim);
            for (d, &j) in mi.iter().enumerate() {
                let off = (c % 3) as isize - 1;
                c /= 3;
                let jj = j as isize + off;
                if jj < 0 || jj as usize >= cg.axes[d].len() {
                    break;
                }
                idx.push(jj as usize);
            }
            if idx.len() == dim {
                if let Some(e) = est[cg.index(&idx)] {
                    best = best.max(e);
                }
            }
        }
        best
    };
    let mut probes = 0;
    let (mut max_lap, mut max_excess, mut tol_max) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut min_k = f64::INFINITY;
    let mut worst = (Vec::new(), 0.0, 0.0);
    for i in 0..cg.len() {
        let Some(lap) = laps[i] else {
            continue;
        };
        if !probe(&cg.point(i)) {
            continue;
        }
        let psi = psi_c[i].unwrap_or(0.0);
        let h = cg.axes.iter().enumerate().map(|(d, a)| {
            let j = cg.multi_index(i)[d];
            let lo = if j > 0 { a.coords[j] - a.coords[j - 1] } else { f64::INFINITY };
            let hi = if j + 1 < a.len() { a.coords[j + 1] - a.coords[j] } else { f64::INFINITY };
            lo.min(hi)
        });
        let h = h.fold(f64::INFINITY, f64::min);
        let tol = 1e3 * f64::EPSILON * psi.abs() / h.powi(4) + block_max(i);
        if let Some(jet) = coarse.nodal_jet(i) {
            min_k = min_k.min(curvature_of_jet(&jet, DEFAULT_GRAD_FLOOR)?.0);
        }
        probes += 1;
        max_lap = max_lap.max(lap);
        if lap - tol > max_excess {
            max_excess = lap - tol;
            worst = (cg.point(i), lap, tol);
        }
        tol_max = tol_max.max(tol);
    }
    if probes == 0 {
        return Err(invalid("no probe node has a full stencil"));
    }
    Ok(SuperharmonicReport {
        probes,
        max_laplacian: max_lap,
        max_excess,
        tol_lap_max: tol_max,
        worst_point: worst.0,
        worst_laplacian: worst.1,
        worst_tol: worst.2,
        min_k,
        passed: max_excess <= 0.0 && min_k > 0.0,
    })
}

/// A 2-D slice `origin + a e1 + b e2`, sampled on a square lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePlane {
    pub origin: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub resolution: usize,
}

impl SlicePlane {
    pub fn point(&self, a: f64, b: f64) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.e1)
            .zip(&self.e2)
            .map(|((o, u), v)| o + a * u + b * v)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub id: usize,
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
    /// sign changes of the turning angle along the curve; zero for a convex
    /// closed curve
    pub turning_sign_changes: usize,
}

fn signed_area(p: &[[f64; 2]]) -> f64 {
    let m = p.len();
    (0..m)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % m]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

fn turning_sign_changes(p: &[[f64; 2]], closed: bool) -> usize {
    let m = p.len();
    if m < 3 {
        return 0;
    }
    let count = if closed { m } else { m - 2 };
    let mut signs = Vec::with_capacity(count);
    for i in 0..count {
        let (a, b, c) = (p[i], p[(i + 1) % m], p[(i + 2) % m]);
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - b[0], c[1] - b[1]];
        let cross = u[0] * v[1] - u[1] * v[0];
        let scale = (u[0].hypot(u[1])) * (v[0].hypot(v[1]));
        if cross.abs() > 1e-9 * scale {
            signs.push(cross > 0.0);
        }
    }
    if signs.len() < 2 {
        return 0;
    }
    let mut changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    if closed && signs[0] != *signs.last().expect("non-empty") {
        changes += 1;
    }
    changes
}

/// Marching squares for `u = t` on the slice; closed curves come out
/// counterclockwise in `(a, b)`.
pub fn extract_isocontour(field: &dyn ScalarField, t: f64, plane: &SlicePlane) -> Vec<Polyline> {
    let m = plane.resolution.max(2);
    let (a0, a1) = plane.a_range;
    let (b0, b1) = plane.b_range;
    let ca = |i: usize| a0 + (a1 - a0) * i as f64 / m as f64;
    let cb = |j: usize| b0 + (b1 - b0) * j as f64 / m as f64;
    let vals: Vec<f64> = (0..(m + 1) * (m + 1))
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % (m + 1), k / (m + 1));
            field.value(&plane.point(ca(i), cb(j))).unwrap_or(f64::NAN)
        })
        .collect();
    let v = |i: usize, j: usize| vals[j * (m + 1) + i];

    // edges keyed by (i, j, dir): dir 0 runs +a from (i, j), dir 1 runs +b
    type Key = (usize, usize, u8);
    let point_on = |k: Key| -> [f64; 2] {
        let (i, j, d) = k;
        let (i2, j2) = if d == 0 { (i + 1, j) } else { (i, j + 1) };
        let (f0, f1) = (v(i, j), v(i2, j2));
        let s = ((t - f0) / (f1 - f0)).clamp(0.0, 1.0);
        [ca(i) + s * (ca(i2) - ca(i)), cb(j) + s * (cb(j2) - cb(j))]
    };
    let mut segs: Vec<(Key, Key)> = Vec::new();
    for j in 0..m {
        for i in 0..m {
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            if c.iter().any(|x| x.is_nan()) {
                continue;
            }
            let bits = c.iter().enumerate().fold(0u8, |acc, (k, &x)| acc | (u8::from(x < t) << k));
            // edges: bottom, right, top, left
            let e = [(i, j, 0u8), (i + 1, j, 1u8), (i, j + 1, 0u8), (i, j, 1u8)];
            let centre_in = (c.iter().sum::<f64>() / 4.0) < t;
            let pairs: &[(usize, usize)] = match bits {
                0 | 15 => &[],
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 => {
                    if centre_in {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                10 => {
                    if centre_in {
                        &[(3, 0), (1, 2)]
                    } else {
                        &[(3, 2), (0, 1)]
                    }
                }
                _ => unreachable!("four corner bits"),
            };
            for &(x, y) in pairs {
                segs.push((e[x], e[y]));
            }
        }
    }
    // link segments through shared edge points
    let mut adj: HashMap<Key, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segs.iter().enumerate() {
        adj.entry(*a).or_default().push(s);
        adj.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segs.len()];
    let mut lines = Vec::new();
    // open curves start at keys of degree one; order keys for determinism
    let mut ends: Vec<Key> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(k, _)| *k).collect();
    ends.sort_unstable();
    let walk = |start_key: Key, first: usize, used: &mut Vec<bool>| -> (Vec<Key>, bool) {
        let mut keys = vec![start_key];
        let mut seg = first;
        let mut key = start_key;
        loop {
            used[seg] = true;
            let (a, b) = segs[seg];
            key = if a == key { b } else { a };
            if key == start_key {
                return (keys, true);
            }
            keys.push(key);
            match adj[&key].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => return (keys, false),
            }
        }
    };
    for k in ends {
        let s = adj[&k][0];
        if used[s] {
            continue;
        }
        let (keys, closed) = walk(k, s, &mut used);
        lines.push((keys, closed));
    }
    for s in 0..segs.len() {
        if !used[s] {
            let (keys, closed) = walk(segs[s].0, s, &mut used);
            lines.push((keys, closed));
        }
    }
    lines
        .into_iter()
        .enumerate()
        .map(|(id, (keys, closed))| {
            let mut points: Vec<[f64; 2]> = keys.into_iter().map(point_on).collect();
            if closed && signed_area(&points) < 0.0 {
                points.reverse();
            }
            let turning_sign_changes = turning_sign_changes(&points, closed);
            Polyline {
                id,
                points,
                closed,
                turning_sign_changes,
            }
        })
        .collect()
}

/// Rows `(x, y, polyline id)`.
pub fn write_contours_csv<W: std::io::Write>(lines: &[Polyline], mut w: W) -> std::io::Result<()> {
    writeln!(w, "x,y,polyline")?;
    for l in lines {
        for p in &l.points {
            writeln!(w, "{:.12e},{:.12e},{}", p[0], p[1], l.id)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticField;
    use nalgebra::{DMatrix, Rotation3, Vector3};
    use proptest::prelude::*;

    fn quadratic(a: Vec<f64>) -> impl SmoothField {
        let n = a.len();
        let a2 = a.clone();
        AnalyticField {
            n,
            f: move |x: &[f64]| 0.5 * x.iter().zip(&a).map(|(v, c)| c * v * v).sum::<f64>(),
            j: move |x: &[f64]| Jet {
                value: 0.5 * x.iter().zip(&a2).map(|(v, c)| c * v * v).sum::<f64>(),
                grad: x.iter().zip(&a2).map(|(v, c)| c * v).collect(),
                hess: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a2.clone())),
            },
        }
    }

    fn dumbbell(p0: Vec<f64>, q0: Vec<f64>) -> impl ScalarField {
        let d = |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        AnalyticField {
            n: p0.len(),
            f: move |x: &[f64]| d(x, &p0).min(d(x, &q0)),
            j: |_: &[f64]| unreachable!("values only"),
        }
    }

    #[test]
    fn balls_are_convex_at_every_level() {
        let f = quadratic(vec![2.0, 2.0, 2.0]);
        for t in [0.05, 0.2, 0.5, 0.9] {
            let opts = SamplerOptions { pair_budget: 2000, ..Default::default() };
            let r = sublevel_convexity_check(&f, t, Sense::Sublevel, 1e-6, &opts).unwrap();
            assert_eq!(r.verdict, Verdict::ConvexUpToTol, "t = {t}: {r:?}");
        }
    }

    #[test]
    fn dumbbell_is_non_convex_with_midpoint_witness() {
        let p0 = vec![-0.5, 0.0, 0.0];
        let q0 = vec![0.5, 0.0, 0.0];
        let f = dumbbell(p0, q0);
        let t = 0.3;
        let opts = SamplerOptions {
            pair_budget: 4000,
            center: Some(vec![0.0; 3]),
            ..Default::default()
        };
        let r = sublevel_convexity_check(&f, t, Sense::Sublevel, 1e-3, &opts).unwrap();
        assert_eq!(r.verdict, Verdict::NonConvex);
        let w = r.witness.unwrap();
        assert!(w.margin > 3.0 * r.tol);
        // m lies on the segment, in the neck between the two balls
        let s = (w.m[0] - w.p[0]) / (w.q[0] - w.p[0]);
        for d in 0..3 {
            assert!((w.p[d] + s * (w.q[d] - w.p[d]) - w.m[d]).abs() < 1e-12);
        }
        assert!(w.m[0].abs() < 0.2, "{w:?}");
        assert!((w.u_m - f.value(&w.m).unwrap()).abs() < 1e-15);
        assert!(w.u_p <= t && w.u_q <= t);
        // the neck depth at the centre bounds the margin from below
        assert!(w.margin >= 0.5 - t - 0.05, "margin {}", w.margin);
    }

    #[test]
    fn empty_level_is_out_of_range() {
        let f = quadratic(vec![1.0; 3]);
        let e = sublevel_convexity_check(&f, -1.0, Sense::Sublevel, 1e-6, &SamplerOptions::default()).unwrap_err();
        assert!(matches!(e, LabError::LevelOutOfRange { .. }));
    }

    #[test]
    fn superlevel_sense_flips() {
        // {-|x|² >= -t} is a ball
        let f = AnalyticField {
            n: 2,
            f: |x: &[f64]| -(x[0] * x[0] + x[1] * x[1]),
            j: |_: &[f64]| unreachable!(),
        };
        let r = sublevel_convexity_check(&f, -0.5, Sense::Superlevel, 1e-6, &SamplerOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::ConvexUpToTol);
    }

    fn radial_jet(x: &[f64], m: f64) -> Jet {
        // u = m r^{2-n} for n = 3
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        let grad: Vec<f64> = x.iter().map(|v| -m * v / (r2 * r)).collect();
        let hess = DMatrix::from_fn(3, 3, |i, j| {
            m * (3.0 * x[i] * x[j] / (r2 * r2 * r) - if i == j { 1.0 / (r2 * r) } else { 0.0 })
        });
        Jet { value: m / r, grad, hess }
    }

    #[test]
    fn curvature_of_spheres() {
        // u = |x|
        let jet = |x: &[f64]| {
            let r = norm(x);
            Jet {
                value: r,
                grad: x.iter().map(|v| v / r).collect(),
                hess: DMatrix::from_fn(3, 3, |i, j| (if i == j { 1.0 } else { 0.0 } - x[i] * x[j] / (r * r)) / r),
            }
        };
        let x = [0.3, -1.2, 0.7];
        let (k, g) = curvature_of_jet(&jet(&x), 1e-8).unwrap();
        let rho = norm(&x);
        assert!((k - rho.powi(-2)).abs() < 1e-12 && (g - 1.0).abs() < 1e-12);
        // u = M r^{-1}: K = r^{-2} independent of M
        let (k, _) = curvature_of_jet(&radial_jet(&x, 2.5), 1e-8).unwrap();
        assert!((k - rho.powi(-2)).abs() < 1e-12);
    }

    #[test]
    fn curvature_of_ellipsoid_level_set() {
        // level set ½xᵀAx = c is the ellipsoid with semi-axes √(2c/a_i);
        // closed form K = 1 / (a b c)² / |x/semi²|⁴ for semi-axes a, b, c
        let a = [1.0, 2.0, 4.0];
        let f = quadratic(a.to_vec());
        let x = [0.4, -0.3, 0.2];
        let c = 0.5 * x.iter().zip(&a).map(|(v, k)| k * v * v).sum::<f64>();
        let semi: Vec<f64> = a.iter().map(|k| (2.0 * c / k).sqrt()).collect();
        let s: f64 = x.iter().zip(&semi).map(|(v, s)| (v / (s * s)).powi(2)).sum();
        let want = 1.0 / ((semi[0] * semi[1] * semi[2]).powi(2) * s * s);
        let (k, _) = gaussian_curvature(&f, &x, 1e-8).unwrap();
        assert!((k - want).abs() < 1e-10 * want, "{k} vs {want}");
    }

    #[test]
    fn critical_point_is_rejected() {
        let f = quadratic(vec![1.0; 3]);
        assert!(matches!(gaussian_curvature(&f, &[0.0; 3], 1e-8), Err(LabError::CriticalPoint { .. })));
    }

    proptest! {
        #[test]
        fn curvature_is_frame_invariant(ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
                                        x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.2f64..1.0) {
            let a = [0.7, 1.3, 2.1];
            let rot = Rotation3::new(Vector3::new(ax, ay, az));
            let r = rot.matrix();
            let amat = DMatrix::from_fn(3, 3, |i, j| (0..3).map(|k| r[(i, k)] * a[k] * r[(j, k)]).sum::<f64>());
            let pt = [x, y, z];
            let base = Jet {
                value: 0.0,
                grad: pt.iter().zip(&a).map(|(v, c)| c * v).collect(),
                hess: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a.to_vec())),
            };
            let xr = r * Vector3::new(x, y, z);
            let g = &amat * nalgebra::DVector::from_vec(vec![xr[0], xr[1], xr[2]]);
            let rotated = Jet { value: 0.0, grad: g.iter().copied().collect(), hess: amat };
            let (k0, _) = curvature_of_jet(&base, 1e-8).unwrap();
            let (k1, _) = curvature_of_jet(&rotated, 1e-8).unwrap();
            prop_assert!((k0 - k1).abs() <= 1e-8 * k0.abs().max(1.0));
        }
    }

    #[test]
    fn circle_contour_is_convex_and_ccw() {
        let f = quadratic(vec![1.0, 1.0, 1.0]);
        let plane = SlicePlane {
            origin: vec![0.0; 3],
            e1: vec![1.0, 0.0, 0.0],
            e2: vec![0.0, 1.0, 0.0],
            a_range: (-1.0, 1.0),
            b_range: (-1.0, 1.0),
            resolution: 80,
        };
        let r0: f64 = 0.6;
        let lines = extract_isocontour(&f, 0.5 * r0 * r0, &plane);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert!(l.closed);
        assert!(signed_area(&l.points) > 0.0);
        assert_eq!(l.turning_sign_changes, 0);
        let h = 2.0 / 80.0;
        for p in &l.points {
            assert!((p[0].hypot(p[1]) - r0).abs() < h * h, "{p:?}");
        }
        assert!(extract_isocontour(&f, -1.0, &plane).is_empty());
    }

    #[test]
    fn dumbbell_contour_has_turning_sign_changes() {
        let f = dumbbell(vec![-0.5, 0.0, 0.0], vec![0.5, 0.0, 0.0]);
        let plane = SlicePlane {
            origin: vec![0.0; 3],
            e1: vec![1.0, 0.0, 0.0],
            e2: vec![0.0, 1.0, 0.0],
            a_range: (-1.5, 1.5),
            b_range: (-1.5, 1.5),
            resolution: 120,
        };
        // overlapping discs: one non-convex closed curve
        let lines = extract_isocontour(&f, 0.6, &plane);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].turning_sign_changes >= 2);
    }
}
