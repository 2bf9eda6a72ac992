//! Closed-form sub- and supersolutions, barriers and the explicit radial
//! solution, evaluated by adaptive quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::quadrature::{integrate, integrate_log};
use crate::symcore::{sk_of_hessian, SymSpec};

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// Width of the regularised-maximum band used when gluing subsolutions.
pub const DEFAULT_TRANSITION_WIDTH: f64 = 1.0;

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `R0 = 100 λ_max(A)`.
pub fn default_r0(spec: &SymSpec) -> f64 {
    100.0 * spec.lambda_max()
}

/// The generalised symmetric subsolution
/// `ū(s) = ∫_{R0}^{s} (1 + α t^{-p})^{1/k} dt`, `p = k / (2 h_k(a))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbarProfile {
    pub spec: SymSpec,
    pub alpha: f64,
    pub r0: f64,
    pub quad_tol: f64,
}

impl UbarProfile {
    pub fn new(spec: &SymSpec, alpha: f64, r0: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(r0 > 0.0) {
            return Err(invalid(format!("R0 must be positive, got {r0}")));
        }
        Ok(Self {
            spec: spec.clone(),
            alpha,
            r0,
            quad_tol: DEFAULT_QUAD_TOL,
        })
    }

    pub fn with_tol(mut self, quad_tol: f64) -> Self {
        self.quad_tol = quad_tol;
        self
    }

    fn p(&self) -> f64 {
        self.spec.exponent()
    }

    /// `(1 + α t^{-p})^{1/k}`, i.e. `dū/ds`.
    pub fn integrand(&self, t: f64) -> f64 {
        (1.0 + self.alpha * t.powf(-self.p())).powf(1.0 / self.spec.k as f64)
    }

    /// `(1 + α t^{-p})^{1/k} - 1` without cancellation for small `α t^{-p}`.
    fn excess(&self, t: f64) -> f64 {
        let x = self.alpha * t.powf(-self.p());
        (x.ln_1p() / self.spec.k as f64).exp_m1()
    }

    /// `ū(s)` for `s >= R0`.
    pub fn value(&self, s: f64) -> Result<f64> {
        if s < self.r0 {
            return Err(invalid(format!("ubar needs s >= R0 = {}, got {s}", self.r0)));
        }
        self.value_signed(s)
    }

    /// `ū(s)` for any `s > 0`; negative below `R0`.
    pub fn value_signed(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(invalid(format!("ubar needs s > 0, got {s}")));
        }
        if s == self.r0 {
            return Ok(0.0);
        }
        if self.alpha == 0.0 {
            return Ok(s - self.r0);
        }
        let excess = integrate_log(|t| self.excess(t), self.r0, s, self.quad_tol)?;
        Ok(s - self.r0 + excess)
    }

    pub fn at_point(&self, x: &[f64]) -> Result<f64> {
        self.value_signed(self.spec.s_of(x))
    }

    /// `ū` at many `s` values at once, integrating once across the sorted
    /// sample set.
    pub fn values_many(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
        let mut out = vec![0.0; s.len()];
        if s.is_empty() {
            return Ok(out);
        }
        // anchor at the sample closest to R0, then sweep outwards
        let pivot = order
            .iter()
            .position(|&i| s[i] >= self.r0)
            .unwrap_or(order.len());
        let per_seg = self.quad_tol / (s.len() as f64 + 1.0);
        let mut acc = 0.0;
        let mut last = self.r0;
        for &i in &order[pivot..] {
            acc += integrate(|t| self.excess(t), last, s[i], per_seg)?;
            last = s[i];
            out[i] = s[i] - self.r0 + acc;
        }
        let mut acc = 0.0;
        let mut last = self.r0;
        for &i in order[..pivot].iter().rev() {
            if !(s[i] > 0.0) {
                return Err(invalid(format!("ubar needs s > 0, got {}", s[i])));
            }
            acc += integrate_log(|t| self.excess(t), last, s[i], per_seg)?;
            last = s[i];
            out[i] = s[i] - self.r0 + acc;
        }
        Ok(out)
    }

    /// Cut-off beyond which replacing the excess by `α t^{-p}/k` costs less
    /// than `tol / 2`.
    fn tail_cut(&self, from: f64) -> Result<f64> {
        let p = self.p();
        if p <= 1.0 {
            return Err(LabError::DivergingTail { exponent: p });
        }
        let k = self.spec.k as f64;
        let bound = |t: f64| {
            (k - 1.0) / (2.0 * k * k) * self.alpha * self.alpha * t.powf(1.0 - 2.0 * p)
                / (2.0 * p - 1.0)
        };
        if bound(from) < 0.5 * self.quad_tol {
            return Ok(from);
        }
        let mut lo = from;
        let mut hi = from * 2.0;
        while bound(hi) >= 0.5 * self.quad_tol {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            if bound(mid) < 0.5 * self.quad_tol {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi / lo < 1.0 + 1e-6 {
                break;
            }
        }
        Ok(hi)
    }

    /// `∫_s^∞ ((1 + α t^{-p})^{1/k} - 1) dt`.
    pub fn tail(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(invalid(format!("tail needs s > 0, got {s}")));
        }
        if self.alpha == 0.0 {
            return Ok(0.0);
        }
        let cut = self.tail_cut(s)?;
        let p = self.p();
        let finite = integrate_log(|t| self.excess(t), s, cut, 0.5 * self.quad_tol)?;
        let analytic = self.alpha / self.spec.k as f64 * cut.powf(1.0 - p) / (p - 1.0);
        Ok(finite + analytic)
    }

    /// `μ(α) = ∫_{R0}^∞ ((1 + α t^{-p})^{1/k} - 1) dt - R0`.
    pub fn mu(&self) -> Result<f64> {
        Ok(self.tail(self.r0)? - self.r0)
    }
}

pub fn ubar(s: f64, alpha: f64, spec: &SymSpec, r0: f64) -> Result<f64> {
    UbarProfile::new(spec, alpha, r0)?.value(s)
}

pub fn mu(alpha: f64, spec: &SymSpec, r0: f64) -> Result<f64> {
    UbarProfile::new(spec, alpha, r0)?.mu()
}

fn require_isotropic(spec: &SymSpec) -> Result<()> {
    if spec.a.iter().any(|&a| (a - spec.a_star).abs() > 1e-12) {
        return Err(invalid("radial solution requires A = a*·I"));
    }
    Ok(())
}

/// Concentric solution `a* ∫_r^ρ (s^k + α s^{k-n})^{1/k} ds` for `A = a*·I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub n: usize,
    pub k: usize,
    pub a_star: f64,
    pub r: f64,
    pub alpha: f64,
    pub quad_tol: f64,
}

impl RadialProfile {
    pub fn new(spec: &SymSpec, r: f64, alpha: f64) -> Result<Self> {
        require_isotropic(spec)?;
        if !(r > 0.0) || !(alpha >= 0.0) {
            return Err(invalid(format!("radial profile needs r > 0, alpha >= 0 (r={r}, alpha={alpha})")));
        }
        Ok(Self {
            n: spec.n,
            k: spec.k,
            a_star: spec.a_star,
            r,
            alpha,
            quad_tol: DEFAULT_QUAD_TOL,
        })
    }

    /// `u'(ρ)`.
    pub fn derivative(&self, rho: f64) -> f64 {
        let k = self.k as i32;
        let base = rho.powi(k) + self.alpha * rho.powi(k - self.n as i32);
        self.a_star * base.powf(1.0 / self.k as f64)
    }

    pub fn value(&self, rho: f64) -> Result<f64> {
        if rho < self.r {
            return Err(invalid(format!("radial solution needs rho >= r = {}, got {rho}", self.r)));
        }
        if self.alpha == 0.0 {
            return Ok(0.5 * self.a_star * (rho * rho - self.r * self.r));
        }
        integrate(|s| self.derivative(s), self.r, rho, self.quad_tol)
    }

    pub fn at_point(&self, x: &[f64]) -> Result<f64> {
        self.value(norm(x))
    }
}

pub fn radial_solution(rho: f64, r: f64, alpha: f64, spec: &SymSpec) -> Result<f64> {
    RadialProfile::new(spec, r, alpha)?.value(rho)
}

/// `½ xᵀ A x + c`.
pub fn psi(x: &[f64], spec: &SymSpec, c: f64) -> f64 {
    spec.s_of(x) + c
}

/// `a* (|x - x0|² - ε²)`.
pub fn inner_barrier(x: &[f64], x0: &[f64], eps: f64, spec: &SymSpec) -> f64 {
    let d = dist(x, x0);
    spec.a_star * (d * d - eps * eps)
}

/// Which of the three fundamental-solution regimes `k` falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierRegime {
    PowerBelow,
    Logarithmic,
    PowerAbove,
}

pub fn barrier_regime(n: usize, k: usize) -> BarrierRegime {
    match (2 * k).cmp(&n) {
        std::cmp::Ordering::Less => BarrierRegime::PowerBelow,
        std::cmp::Ordering::Equal => BarrierRegime::Logarithmic,
        std::cmp::Ordering::Greater => BarrierRegime::PowerAbove,
    }
}

fn outer_barrier_shape(r: f64, eps: f64, n: usize, k: usize) -> f64 {
    let e = 2.0 - n as f64 / k as f64;
    match barrier_regime(n, k) {
        BarrierRegime::PowerBelow => 1.0 - (r / eps).powf(e),
        BarrierRegime::Logarithmic => 1.0 - r.ln() / eps.ln(),
        BarrierRegime::PowerAbove => r.powf(e) - eps.powf(e),
    }
}

/// Upper barrier near the inner ball; `S_k` of its Hessian vanishes away
/// from `x0`.
pub fn outer_barrier(x: &[f64], x0: &[f64], eps: f64, spec: &SymSpec, c: f64) -> Result<f64> {
    let r = dist(x, x0);
    if r == 0.0 {
        return Err(LabError::SingularPoint(x.to_vec()));
    }
    Ok(c * outer_barrier_shape(r, eps, spec.n, spec.k))
}

/// Normal derivative of [`outer_barrier`] on `∂B_ε(x0)`.
pub fn c_eps(eps: f64, spec: &SymSpec, c: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(invalid(format!("c_eps needs 0 < eps < 1/2, got {eps}")));
    }
    let (n, k) = (spec.n as f64, spec.k as f64);
    Ok(match barrier_regime(spec.n, spec.k) {
        BarrierRegime::PowerBelow => c * (n / k - 2.0) / eps,
        BarrierRegime::Logarithmic => c / (eps * eps.ln().abs()),
        BarrierRegime::PowerAbove => c * (2.0 - n / k) * eps.powf(1.0 - n / k),
    })
}

/// Smallest `C` with `outer_barrier >= 2 λ_max(A) + μ(α)` on `∂B_2(0)`.
pub fn barrier_constant(spec: &SymSpec, mu_alpha: f64, x0: &[f64], eps: f64) -> Result<f64> {
    let r_min = 2.0 - norm(x0);
    if !(r_min > eps) {
        return Err(invalid("B_eps(x0) must lie inside B_2(0)"));
    }
    let target = 2.0 * spec.lambda_max() + mu_alpha;
    Ok(target.max(0.0) / outer_barrier_shape(r_min, eps, spec.n, spec.k))
}

/// `(a + b)/2 + (w/2) g((a-b)/w)` with the even quartic
/// `g(x) = 3/8 + 3x²/4 - x⁴/8` on `|x| <= 1` and `|x|` outside; C² and
/// never below `max(a, b)`.
pub fn smooth_max(a: f64, b: f64, width: f64) -> f64 {
    let d = a - b;
    if d >= width {
        return a;
    }
    if d <= -width {
        return b;
    }
    let x = d / width;
    let x2 = x * x;
    0.5 * (a + b) + 0.5 * width * (0.375 + 0.75 * x2 - 0.125 * x2 * x2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    SubsolutionUbar,
    RadialWangbao,
    SupersolutionPsi,
    InnerBarrier,
    OuterBarrier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProfileFn {
    SubsolutionUbar(UbarProfile),
    RadialWangbao(RadialProfile),
    SupersolutionPsi { spec: SymSpec, c: f64 },
    InnerBarrier { spec: SymSpec, x0: Vec<f64>, eps: f64 },
    OuterBarrier { spec: SymSpec, x0: Vec<f64>, eps: f64, c: f64 },
}

impl ProfileFn {
    pub fn kind(&self) -> ProfileKind {
        match self {
            ProfileFn::SubsolutionUbar(_) => ProfileKind::SubsolutionUbar,
            ProfileFn::RadialWangbao(_) => ProfileKind::RadialWangbao,
            ProfileFn::SupersolutionPsi { .. } => ProfileKind::SupersolutionPsi,
            ProfileFn::InnerBarrier { .. } => ProfileKind::InnerBarrier,
            ProfileFn::OuterBarrier { .. } => ProfileKind::OuterBarrier,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            ProfileFn::SubsolutionUbar(p) => p.at_point(x),
            ProfileFn::RadialWangbao(p) => p.at_point(x),
            ProfileFn::SupersolutionPsi { spec, c } => Ok(psi(x, spec, *c)),
            ProfileFn::InnerBarrier { spec, x0, eps } => Ok(inner_barrier(x, x0, *eps, spec)),
            ProfileFn::OuterBarrier { spec, x0, eps, c } => outer_barrier(x, x0, *eps, spec, *c),
        }
    }
}

/// Regularised maximum of two profiles at `x`.
pub fn glue_subsolution(x: &[f64], inner: &ProfileFn, outer: &ProfileFn, transition_width: f64) -> Result<f64> {
    if !(transition_width > 0.0) {
        return Err(invalid("transition width must be positive"));
    }
    Ok(smooth_max(inner.eval(x)?, outer.eval(x)?, transition_width))
}

/// Sample points on the two annuli where the gluing needs separation.
#[derive(Debug, Clone)]
pub struct SeparationSamples {
    /// points of `B_2(0) \ B_1(0)`
    pub inner: Vec<Vec<f64>>,
    /// points of `E_{3R0}(0) \ E_{2R0}(0)`
    pub outer: Vec<Vec<f64>>,
}

/// Coordinate index `ax` such that `x0` lies on that axis and all other
/// diagonal entries of `A` coincide.
pub fn symmetry_axis(spec: &SymSpec, x0: &[f64]) -> Option<usize> {
    (0..spec.n).find(|&ax| {
        let on_axis = x0.iter().enumerate().all(|(i, v)| i == ax || *v == 0.0);
        let others: Vec<f64> = (0..spec.n).filter(|&i| i != ax).map(|i| spec.a[i]).collect();
        on_axis && others.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-14 * w[0].abs())
    })
}

fn sphere_directions(n: usize, per_dim: usize, axis: Option<usize>) -> Vec<Vec<f64>> {
    if let Some(ax) = axis {
        // meridian half-circle in the (e_other, e_ax) plane
        let other = if ax == 0 { 1 } else { 0 };
        return (0..per_dim)
            .map(|i| {
                let phi = std::f64::consts::PI * i as f64 / (per_dim - 1) as f64;
                let mut d = vec![0.0; n];
                d[ax] = phi.cos();
                d[other] = phi.sin();
                d
            })
            .collect();
    }
    // hyperspherical angles: n-2 polar angles in [0, π], one azimuth in [0, 2π)
    let mut dirs = Vec::new();
    let mut idx = vec![0usize; n - 1];
    loop {
        let mut angles = Vec::with_capacity(n - 1);
        for (j, &i) in idx.iter().enumerate() {
            if j + 1 < n - 1 {
                angles.push(std::f64::consts::PI * i as f64 / (per_dim - 1) as f64);
            } else {
                angles.push(2.0 * std::f64::consts::PI * i as f64 / per_dim as f64);
            }
        }
        let mut d = vec![0.0; n];
        let mut sin_prod = 1.0;
        for j in 0..n - 1 {
            d[j] = sin_prod * angles[j].cos();
            sin_prod *= angles[j].sin();
        }
        d[n - 1] = sin_prod;
        dirs.push(d);
        let mut j = 0;
        loop {
            if j == n - 1 {
                return dirs;
            }
            idx[j] += 1;
            if idx[j] < per_dim {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// 64 points per annulus dimension; for `n >= 4` without axial symmetry
/// the per-dimension count is reduced to keep the set near 64³ points.
pub fn separation_samples(spec: &SymSpec, r0: f64, x0: &[f64]) -> SeparationSamples {
    const PER_DIM: usize = 64;
    let axis = symmetry_axis(spec, x0);
    let per_dim = if axis.is_some() || spec.n <= 3 {
        PER_DIM
    } else {
        ((PER_DIM.pow(3) as f64).powf(1.0 / spec.n as f64).floor() as usize).max(6)
    };
    let dirs = sphere_directions(spec.n, per_dim, axis);
    let radial = |lo: f64, hi: f64| -> Vec<f64> {
        (0..per_dim)
            .map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64)
            .collect()
    };
    let mut inner = Vec::new();
    for r in radial(1.0, 2.0) {
        for d in &dirs {
            inner.push(d.iter().map(|v| r * v).collect());
        }
    }
    let mut outer = Vec::new();
    for s in radial(2.0 * r0, 3.0 * r0) {
        for d in &dirs {
            outer.push(
                d.iter()
                    .zip(&spec.a)
                    .map(|(v, a)| (2.0 * s / a).sqrt() * v)
                    .collect(),
            );
        }
    }
    SeparationSamples { inner, outer }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationMargins {
    /// `min (ū^ε - ū) - 1` over `B_2 \ B_1`
    pub inner: f64,
    /// `min (ū - ū^ε) - 1` over `E_{3R0} \ E_{2R0}`
    pub outer: f64,
    pub mu: f64,
}

impl SeparationMargins {
    pub fn feasible(&self) -> bool {
        self.inner >= 0.0 && self.outer >= 0.0 && self.mu >= 0.0
    }
}

pub fn separation_margins(
    spec: &SymSpec,
    alpha: f64,
    r0: f64,
    x0: &[f64],
    eps: f64,
    samples: &SeparationSamples,
) -> Result<SeparationMargins> {
    let ub = UbarProfile::new(spec, alpha, r0)?;
    let s_in: Vec<f64> = samples.inner.iter().map(|x| spec.s_of(x)).collect();
    let s_out: Vec<f64> = samples.outer.iter().map(|x| spec.s_of(x)).collect();
    let u_in = ub.values_many(&s_in)?;
    let u_out = ub.values_many(&s_out)?;
    let inner = samples
        .inner
        .iter()
        .zip(&u_in)
        .map(|(x, u)| inner_barrier(x, x0, eps, spec) - u)
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    let outer = samples
        .outer
        .iter()
        .zip(&u_out)
        .map(|(x, u)| u - inner_barrier(x, x0, eps, spec))
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    Ok(SeparationMargins {
        inner,
        outer,
        mu: ub.mu()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alpha0 {
    pub alpha0: f64,
    /// `c* = μ(α0)`
    pub c_star: f64,
    pub margins: SeparationMargins,
    pub evaluations: usize,
}

/// Smallest `α` (to 1e-3 relative) for which both sampled separation
/// inequalities and `μ(α) >= 0` hold.
pub fn alpha0_search(spec: &SymSpec, r0: f64, x0: &[f64], eps: f64) -> Result<Alpha0> {
    const ALPHA_MAX: f64 = 1e9;
    if 2.0 * spec.lambda_max() >= r0 {
        return Err(LabError::SearchFailed(format!(
            "R0 = {r0} must exceed 2 λ_max(A) = {}",
            2.0 * spec.lambda_max()
        )));
    }
    let samples = separation_samples(spec, r0, x0);
    let mut evaluations = 0;
    let mut check = |alpha: f64| -> Result<SeparationMargins> {
        evaluations += 1;
        separation_margins(spec, alpha, r0, x0, eps, &samples)
    };
    let mut hi = 1.0;
    let mut hi_margins = check(hi)?;
    while !hi_margins.feasible() {
        hi *= 2.0;
        if hi > ALPHA_MAX {
            return Err(LabError::SearchFailed(format!("no alpha <= {ALPHA_MAX:e} separates the profiles")));
        }
        hi_margins = check(hi)?;
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        let m = check(mid)?;
        if m.feasible() {
            hi = mid;
            hi_margins = m;
        } else {
            lo = mid;
        }
    }
    Ok(Alpha0 {
        alpha0: hi,
        c_star: hi_margins.mu,
        margins: hi_margins,
        evaluations,
    })
}

/// The subsolution of the ring problem: `ū^ε` inside `B_1(0)`, `ū` outside
/// `E_{3R0}(0)`, and their regularised maximum in between.
#[derive(Debug, Clone)]
pub struct GluedSubsolution {
    pub ubar: UbarProfile,
    pub x0: Vec<f64>,
    pub eps: f64,
    pub width: f64,
}

impl GluedSubsolution {
    /// Fails with `GluingInfeasible` when the sampled separation does not hold.
    pub fn new(spec: &SymSpec, alpha: f64, r0: f64, x0: &[f64], eps: f64) -> Result<Self> {
        let samples = separation_samples(spec, r0, x0);
        let m = separation_margins(spec, alpha, r0, x0, eps, &samples)?;
        if m.inner < 0.0 || m.outer < 0.0 {
            return Err(LabError::GluingInfeasible(format!(
                "separation margins inner {:.3e}, outer {:.3e}: raise alpha",
                m.inner, m.outer
            )));
        }
        Ok(Self {
            ubar: UbarProfile::new(spec, alpha, r0)?,
            x0: x0.to_vec(),
            eps,
            width: DEFAULT_TRANSITION_WIDTH,
        })
    }

    pub fn spec(&self) -> &SymSpec {
        &self.ubar.spec
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let spec = &self.ubar.spec;
        let inner = inner_barrier(x, &self.x0, self.eps, spec);
        if norm(x) < 1.0 {
            return Ok(inner);
        }
        let s = spec.s_of(x);
        let outer = self.ubar.value_signed(s)?;
        if s > 3.0 * self.ubar.r0 {
            return Ok(outer);
        }
        Ok(smooth_max(inner, outer, self.width))
    }

    /// `eval` over many points, integrating `ū` once across the sorted set.
    pub fn eval_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let spec = &self.ubar.spec;
        let far: Vec<usize> = (0..xs.len()).filter(|&i| norm(&xs[i]) >= 1.0).collect();
        let s: Vec<f64> = far.iter().map(|&i| spec.s_of(&xs[i])).collect();
        let ub = self.ubar.values_many(&s)?;
        let mut out: Vec<f64> = xs.iter().map(|x| inner_barrier(x, &self.x0, self.eps, spec)).collect();
        for ((&i, &si), &u) in far.iter().zip(&s).zip(&ub) {
            out[i] = if si > 3.0 * self.ubar.r0 { u } else { smooth_max(out[i], u, self.width) };
        }
        Ok(out)
    }

    /// Minimum of `S_k(D²ū_glued)` over `points` (finite-difference Hessian
    /// with step `step`) and whether every sample is k-convex.
    pub fn check_subsolution(&self, points: &[Vec<f64>], step: f64) -> Result<(f64, bool)> {
        let n = self.spec().n;
        let k = self.spec().k;
        let mut min_sk = f64::INFINITY;
        let mut all_convex = true;
        for x in points {
            let h = fd_hessian(|y| self.eval(y), x, step, n)?;
            let ev = sk_of_hessian(&h, k)?;
            let lambda: Vec<f64> = ev.eigenvalues.iter().copied().collect();
            all_convex &= crate::symcore::in_gamma_k(&lambda, k);
            min_sk = min_sk.min(ev.value);
        }
        Ok((min_sk, all_convex))
    }
}

/// Central-difference Hessian of `f` at `x`.
pub fn fd_hessian<F>(f: F, x: &[f64], step: f64, n: usize) -> Result<nalgebra::DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut h = nalgebra::DMatrix::zeros(n, n);
    let f0 = f(x)?;
    let shifted = |di: usize, si: f64, dj: usize, sj: f64| -> Result<f64> {
        let mut y = x.to_vec();
        y[di] += si;
        y[dj] += sj;
        f(&y)
    };
    for i in 0..n {
        let fp = shifted(i, step, i, 0.0)?;
        let fm = shifted(i, -step, i, 0.0)?;
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (step * step);
        for j in (i + 1)..n {
            let v = (shifted(i, step, j, step)? - shifted(i, step, j, -step)?
                - shifted(i, -step, j, step)?
                + shifted(i, -step, j, -step)?)
                / (4.0 * step * step);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}
