//! Experiment orchestration: config in, report and CSV data out.

mod config;
mod output;
mod pipelines;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{AnalysisConfig, AutoOr, ExperimentConfig, GridConfig, HarmonicConfig, ModeName, Problem, RadialConfig, RingConfig, SpecConfig};
pub use output::{write_outputs, write_sweep_csv};
pub use pipelines::level_box;

use crate::error::Result;
use crate::levelset::{ConvexityReport, CurvatureReport, Polyline, SuperharmonicReport, WitnessReport};
use crate::solver::{AsymptoticFit, EpsSweepReport, GradientBands, HarmonicReport, RSweepReport, SolveReport};

/// A pass/fail claim with its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// `"<="` or `">="`
    pub relation: String,
    pub bound: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: "<=".into(),
            bound,
            passed: measured <= bound,
            detail: detail.into(),
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: ">=".into(),
            bound,
            passed: measured >= bound,
            detail: detail.into(),
        }
    }

    /// A boolean claim, recorded as `1 >= 1`.
    pub fn holds(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0, detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub n: usize,
    pub k: usize,
    pub a: Vec<f64>,
    pub a_star: f64,
    pub h_k: f64,
    /// `p = k / (2 h_k)`
    pub exponent: f64,
    pub r0: Option<f64>,
    pub r: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha0: Option<f64>,
    /// `μ(α)` for the α used
    pub c: Option<f64>,
    /// `C_ε` per ε, with the lower band `2 a* ε`
    pub c_eps_band: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSolve {
    pub label: String,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum WitnessOutcome {
    NonConvex { eps: f64, report: WitnessReport },
    Inconclusive { eps: f64, gap: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEntry {
    pub t: f64,
    pub body: crate::geometry::ConvexBody,
    pub report: HarmonicReport,
    pub fit: AsymptoticFit,
    pub curvature: CurvatureReport,
    pub superharmonic: Option<SuperharmonicReport>,
    /// `max |u - (r/|x|)^{n-2}|` when the body is a ball
    pub ball_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialRow {
    pub h: f64,
    pub max_error: f64,
    /// observed order against the previous row
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationDemo {
    pub normalized: crate::geometry::NormalizedProblem,
    pub reconstruction_error: f64,
    pub round_trip_error: f64,
    /// `a` rescaled to `S_k = 1`
    pub spec_a: Vec<f64>,
    pub h_k: f64,
}

/// One `(parameter, metric)` row of sweep.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub metric: String,
    pub metric_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub config_hash: String,
    pub config: Option<ExperimentConfig>,
    pub derived: Derived,
    pub solves: Vec<NamedSolve>,
    pub convexity: Vec<ConvexityReport>,
    pub witnesses: Vec<WitnessOutcome>,
    pub gradient_bands: Vec<GradientBands>,
    pub harmonic: Vec<HarmonicEntry>,
    pub r_sweep: Option<RSweepReport>,
    pub eps_sweep: Option<EpsSweepReport>,
    pub radial_table: Vec<RadialRow>,
    pub normalization: Option<NormalizationDemo>,
    pub sweep_rows: Vec<SweepRow>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl PartialEq for RSweepReport {
    fn eq(&self, other: &Self) -> bool {
        self.radii == other.radii && self.pairs == other.pairs && self.psi_gap == other.psi_gap && self.reports == other.reports
    }
}

impl PartialEq for EpsSweepReport {
    fn eq(&self, other: &Self) -> bool {
        self.eps == other.eps && self.pairs == other.pairs && self.psi_gap == other.psi_gap && self.origin_values == other.origin_values
    }
}

/// Wall-clock per stage; kept out of report.json so that file is
/// reproducible bit for bit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
    pub total_s: f64,
}

/// Everything a run produces, held in memory until it is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub field: Option<crate::field::GridField>,
    pub contours: Vec<Polyline>,
    pub timing: Timing,
}

/// Runs the pipeline for `cfg`. Nothing is written; see [`write_outputs`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let mut out = match cfg.problem {
        Problem::KhessianRing | Problem::KhessianExteriorSweep => pipelines::khessian(cfg)?,
        Problem::HarmonicExterior => pipelines::harmonic(cfg)?,
        Problem::RadialControl => pipelines::radial(cfg)?,
        Problem::NormalizeDemo => pipelines::normalize_demo(cfg)?,
    };
    out.report.problem = cfg.problem.name().into();
    out.report.config_hash = cfg.hash();
    out.report.config = Some(cfg.clone());
    out.report.passed = out.report.checks.iter().all(|c| c.passed);
    out.timing.total_s = t0.elapsed().as_secs_f64();
    Ok(out)
}

/// `run` for configs carrying a list-valued parameter.
pub fn sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let has_list = cfg.ring.eps_list.len() >= 2
        || cfg.ring.r_list.len() >= 2
        || cfg.harmonic.t_list.len() >= 2
        || (cfg.problem == Problem::RadialControl && cfg.grid.h_list.len() >= 2);
    if !has_list {
        return Err(crate::error::LabError::Config(
            "sweep needs eps_list, r_list, t_list or h_list with two or more entries".into(),
        ));
    }
    run(cfg)
}
