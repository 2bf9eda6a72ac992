//! Finite-difference solvers: the ring problem for `S_k(D²u) = 1` and the
//! exterior harmonic problem.

mod discretize;
mod harmonic;
mod newton;
mod ring;
mod sweeps;

use serde::{Deserialize, Serialize};

pub use discretize::{BoundaryProblem, Discretization, Layout, LinForm, OuterCondition};
pub use harmonic::{fit_asymptotic_m, solve_harmonic_exterior, AsymptoticFit, HarmonicReport};
pub use harmonic::{sphere_rule, spherical_mean};
pub use newton::{laplacian_system, newton_solve, SolveStats, SolverOptions};
pub use ring::{gradient_bands, solve_ring, solve_ring_axisym, GradientBands, RingData, RingSolution};
pub use sweeps::{eps_sweep, r_sweep, EpsSweepReport, OrderPair, RSweepReport, SweepOptions};

use crate::error::{invalid, Result};
use crate::field::GridField;
use crate::geometry::{Grid, GridDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(flatten)]
    pub stats: SolveStats,
    pub grid: GridDescriptor,
    /// `max(ū_glued - u, u - ψ, 0)` over nodes, where defined
    pub sandwich_violation: Option<f64>,
    pub monotonicity_flags: Vec<String>,
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Nodewise discretization-error estimate on a coarse grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TolField {
    pub values: Vec<f64>,
}

impl TolField {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Largest estimate over the corners of the cell holding `x`.
    pub fn at(&self, grid: &Grid, x: &[f64]) -> f64 {
        let gc = grid.to_grid(x);
        let base: Vec<usize> = gc.iter().zip(&grid.axes).map(|(&c, a)| a.cell(c)).collect();
        let gd = base.len();
        let mut worst: f64 = 0.0;
        for mask in 0..(1usize << gd) {
            let idx: Vec<usize> = (0..gd).map(|d| base[d] + ((mask >> d) & 1)).collect();
            if idx.iter().zip(&grid.axes).all(|(&i, a)| i < a.len()) {
                worst = worst.max(self.values[grid.index(&idx)]);
            }
        }
        worst
    }

    pub fn plus(&self, other: &TolField) -> TolField {
        TolField {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }
}

/// `|u_h - u_{h/2}| / 3 + 1e-10 (1 + |u|)` at active coarse nodes; the fine
/// field must live on `coarse.grid.refined()`.
pub fn richardson_tol(coarse: &GridField, fine: &GridField) -> Result<TolField> {
    let cg = &coarse.grid;
    let fg = &fine.grid;
    if fg.axes.len() != cg.axes.len() || fg.axes.iter().zip(&cg.axes).any(|(f, c)| f.len() != 2 * c.len() - 1) {
        return Err(invalid("fine grid is not the refinement of the coarse grid"));
    }
    let mut values = vec![0.0; cg.len()];
    for (i, v) in values.iter_mut().enumerate() {
        if !coarse.is_active(i) {
            continue;
        }
        let idx: Vec<usize> = cg.multi_index(i).iter().map(|&j| 2 * j).collect();
        let uf = fine.values[fg.index(&idx)];
        let uc = coarse.values[i];
        *v = (uc - uf).abs() / 3.0 + 1e-10 * (1.0 + uc.abs());
    }
    Ok(TolField { values })
}
