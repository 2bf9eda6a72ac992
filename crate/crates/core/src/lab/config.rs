//! Experiment configuration. TOML with one table per concern; every field
//! has a default so `print-defaults` emits a complete, runnable file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    KhessianRing,
    KhessianExteriorSweep,
    HarmonicExterior,
    RadialControl,
    NormalizeDemo,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::KhessianRing => "khessian-ring",
            Problem::KhessianExteriorSweep => "khessian-exterior-sweep",
            Problem::HarmonicExterior => "harmonic-exterior",
            Problem::RadialControl => "radial-control",
            Problem::NormalizeDemo => "normalize-demo",
        }
    }
}

/// A number or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl AutoOr {
    pub const AUTO: AutoOr = AutoOr::Auto(AutoTag::Auto);

    pub fn value(self) -> Option<f64> {
        match self {
            AutoOr::Value(v) => Some(v),
            AutoOr::Auto(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecConfig {
    pub k: usize,
    /// diagonal of `A`; rescaled so that `S_k(a) = 1` when `normalize`
    pub a: Vec<f64>,
    pub normalize: bool,
    /// full symmetric `A` (rows), with `b` and `c`, for normalize-demo
    pub a_full: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub c: Option<f64>,
}

impl Default for SpecConfig {
    fn default() -> Self {
        Self {
            k: 1,
            a: vec![0.4, 0.4, 0.2],
            normalize: false,
            a_full: None,
            b: None,
            c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    pub x0: Vec<f64>,
    /// inner radius; the first entry of `eps_list` when that is set
    pub eps: f64,
    pub eps_list: Vec<f64>,
    /// outer level `R`; `auto` is `3.2 R0`
    pub r: AutoOr,
    pub r_list: Vec<f64>,
    /// `auto` is `100 λ_max(A)`
    pub r0: AutoOr,
    /// `auto` runs the α0 search
    pub alpha: AutoOr,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            x0: vec![0.0, 0.0, 0.45],
            eps: 1e-7,
            eps_list: Vec::new(),
            r: AutoOr::AUTO,
            r_list: Vec::new(),
            r0: AutoOr::AUTO,
            alpha: AutoOr::AUTO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Full,
    Axisym,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub mode: ModeName,
    /// symmetry axis for axisym grids
    pub axis: usize,
    /// core spacing
    pub h: f64,
    pub core_half_width: f64,
    pub growth: f64,
    /// spacing at the inner ball; `auto` is `ε / 4`
    pub focus_h: AutoOr,
    /// 1 = single solve, 2 = add a refined solve for tol_h
    pub levels: usize,
    /// spacings for the manufactured-solution table
    pub h_list: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            mode: ModeName::Axisym,
            axis: 2,
            h: 0.04,
            core_half_width: 0.6,
            growth: 1.2,
            focus_h: AutoOr::AUTO,
            levels: 2,
            h_list: vec![0.2, 0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// explicit levels for segment tests; empty picks levels automatically
    pub levels: Vec<f64>,
    pub probe_shells: Vec<f64>,
    pub pair_budget: usize,
    pub candidates_per_axis: usize,
    pub points_per_segment: usize,
    pub seed: u64,
    /// sampling resolution of contour slices
    pub contour_resolution: usize,
    /// expected verdict of the witness: "non-convex", "convex" or "none"
    pub expect: String,
    /// superharmonicity probes keep at least this body level (a length) away
    /// from the body, independent of h
    pub probe_clearance: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            probe_shells: vec![3.0, 4.0, 6.0, 8.0],
            pair_budget: 20_000,
            candidates_per_axis: 16,
            points_per_segment: 65,
            seed: 0x5eed,
            contour_resolution: 200,
            expect: "non-convex".into(),
            probe_clearance: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicConfig {
    /// semi-axes `(ρ, z)` of the spheroid `Ω1`
    pub axes: Vec<f64>,
    /// radius of the ball `Ω0`
    pub ball_radius: f64,
    /// Minkowski parameters; `[1.0]` is `Ω1` alone
    pub t_list: Vec<f64>,
    pub r_out: f64,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self {
            axes: vec![1.0, 1.5],
            ball_radius: 1.0,
            t_list: vec![1.0],
            r_out: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialConfig {
    pub r: f64,
    pub rho_out: f64,
    pub alpha: f64,
}

impl Default for RadialConfig {
    fn default() -> Self {
        Self {
            r: 0.5,
            rho_out: 1.5,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub output_dir: String,
    pub spec: SpecConfig,
    pub ring: RingConfig,
    pub grid: GridConfig,
    pub solver: SolverOptions,
    pub analysis: AnalysisConfig,
    pub harmonic: HarmonicConfig,
    pub radial: RadialConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: Problem::KhessianRing,
            output_dir: "lab-out".into(),
            spec: SpecConfig::default(),
            ring: RingConfig::default(),
            grid: GridConfig::default(),
            solver: SolverOptions::default(),
            analysis: AnalysisConfig::default(),
            harmonic: HarmonicConfig::default(),
            radial: RadialConfig::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, so formatting and comments in
    /// the source file do not change it.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }

    /// Checks preconditions that need no solve.
    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        let n = s.a.len();
        if s.k == 0 || s.k > n.max(1) {
            return Err(bad(format!("k = {} must lie in 1..=n = {n}", s.k)));
        }
        if s.a.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(bad("spec.a must be positive and finite"));
        }
        let g = &self.grid;
        if !(g.h > 0.0 && g.growth >= 1.0 && g.core_half_width > 0.0) {
            return Err(bad("grid needs h > 0, growth >= 1 and core_half_width > 0"));
        }
        if !(1..=2).contains(&g.levels) {
            return Err(bad("grid.levels must be 1 or 2"));
        }
        if g.mode == ModeName::Axisym && g.axis >= n {
            return Err(bad("grid.axis out of range"));
        }
        if let Some(f) = g.focus_h.value() {
            if !(f > 0.0) {
                return Err(bad("grid.focus_h must be positive"));
            }
        }
        let r = &self.ring;
        let pos = |v: Option<f64>, name: &str| -> Result<()> {
            match v {
                Some(x) if !(x > 0.0 && x.is_finite()) => Err(bad(format!("{name} must be positive"))),
                _ => Ok(()),
            }
        };
        pos(r.r.value(), "ring.r")?;
        pos(r.r0.value(), "ring.r0")?;
        if let Some(a) = r.alpha.value() {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(bad("ring.alpha must be non-negative"));
            }
        }
        if !["non-convex", "convex", "none"].contains(&self.analysis.expect.as_str()) {
            return Err(bad("analysis.expect must be non-convex, convex or none"));
        }
        if self.analysis.points_per_segment < 3 || self.analysis.pair_budget == 0 {
            return Err(bad("analysis needs points_per_segment >= 3 and a positive pair budget"));
        }
        match self.problem {
            Problem::KhessianRing | Problem::KhessianExteriorSweep => {
                if r.x0.len() != n {
                    return Err(bad("ring.x0 has the wrong dimension"));
                }
                for &e in std::iter::once(&r.eps).chain(&r.eps_list) {
                    if !(e > 0.0 && e < 0.5) {
                        return Err(bad(format!("eps = {e} must lie in (0, 1/2)")));
                    }
                }
                let x0n = r.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
                if x0n >= 0.5 {
                    return Err(bad("|x0| must be below 1/2"));
                }
                if r.r_list.iter().any(|v| !(*v > 0.0)) {
                    return Err(bad("ring.r_list entries must be positive"));
                }
                if self.problem == Problem::KhessianExteriorSweep && r.eps_list.len() < 2 && r.r_list.len() < 2 {
                    return Err(bad("an exterior sweep needs eps_list or r_list with two or more entries"));
                }
            }
            Problem::HarmonicExterior => {
                let h = &self.harmonic;
                if n != 3 {
                    return Err(bad("harmonic-exterior is set up for n = 3"));
                }
                if h.axes.len() != 2 || h.axes.iter().any(|v| !(*v > 0.0)) || !(h.ball_radius > 0.0) {
                    return Err(bad("harmonic.axes needs two positive semi-axes and a positive ball radius"));
                }
                if h.t_list.is_empty() || h.t_list.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(bad("harmonic.t_list entries must lie in [0, 1]"));
                }
                if self.analysis.probe_shells.len() < 2 || self.analysis.probe_shells.iter().any(|&r| !(r > 0.0 && r < h.r_out)) {
                    return Err(bad("need two or more probe shells inside r_out"));
                }
            }
            Problem::RadialControl => {
                let c = &self.radial;
                if !(c.r > 0.0 && c.rho_out > c.r && c.alpha >= 0.0) {
                    return Err(bad("radial needs 0 < r < rho_out and alpha >= 0"));
                }
                if g.h_list.len() < 2 || g.h_list.iter().any(|h| !(*h > 0.0)) {
                    return Err(bad("grid.h_list needs two or more positive spacings"));
                }
            }
            Problem::NormalizeDemo => {
                let a = s.a_full.as_ref().ok_or_else(|| bad("normalize-demo needs spec.a_full"))?;
                if a.iter().any(|row| row.len() != a.len()) {
                    return Err(bad("spec.a_full must be square"));
                }
                if s.b.as_ref().is_some_and(|b| b.len() != a.len()) {
                    return Err(bad("spec.b has the wrong dimension"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let d = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&d.to_toml()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.hash(), d.hash());
    }

    #[test]
    fn malformed_configs_are_rejected() {
        for text in [
            "problem = \"nope\"",
            "[spec]\nk = 0",
            "[ring]\neps = 0.7",
            "[grid]\nh = -1.0",
            "unknown_key = 3",
            "[ring]\nalpha = \"sometimes\"",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(LabError::Config(_))), "{text}");
        }
    }

    #[test]
    fn auto_and_numbers_parse() {
        let c = ExperimentConfig::from_toml("[ring]\nalpha = 12.5\nr = \"auto\"").unwrap();
        assert_eq!(c.ring.alpha, AutoOr::Value(12.5));
        assert_eq!(c.ring.r, AutoOr::AUTO);
    }
}
