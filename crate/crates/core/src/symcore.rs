//! Elementary symmetric polynomials of eigenvalues, the Gårding cone, and
//! the constants attached to a diagonal matrix `A` with `S_k(A) = 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};

/// Largest vector length accepted by [`elem_sym`].
pub const MAX_DIM: usize = 64;

/// Absolute asymmetry above which a Hessian is rejected.
pub const ASYMMETRY_TOL: f64 = 1e-8;

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// All elementary symmetric polynomials `S_0..=S_kmax` of `lambda`,
/// accumulated through the characteristic-polynomial recurrence.
pub fn elem_sym_all(lambda: &[f64], kmax: usize) -> Vec<f64> {
    let mut e = vec![0.0; kmax + 1];
    e[0] = 1.0;
    for (i, &l) in lambda.iter().enumerate() {
        let top = (i + 1).min(kmax);
        for j in (1..=top).rev() {
            e[j] += l * e[j - 1];
        }
    }
    e
}

/// `S_k(lambda)`, with `S_0 = 1`.
pub fn elem_sym(lambda: &[f64], k: usize) -> Result<f64> {
    let n = lambda.len();
    if n > MAX_DIM {
        return Err(invalid(format!("vector length {n} exceeds {MAX_DIM}")));
    }
    if k > n {
        return Err(invalid(format!("k = {k} exceeds n = {n}")));
    }
    Ok(elem_sym_all(lambda, k)[k])
}

/// `S_k(lambda | i)`: the polynomial with the `i`-th entry removed.
fn elem_sym_without(lambda: &[f64], skip: usize, k: usize) -> f64 {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    let mut count = 0;
    for (i, &l) in lambda.iter().enumerate() {
        if i == skip {
            continue;
        }
        count += 1;
        let top = count.min(k);
        for j in (1..=top).rev() {
            e[j] += l * e[j - 1];
        }
    }
    e[k]
}

/// Gradient of `S_k` with respect to the eigenvalues: `g_i = S_{k-1}(lambda | i)`.
pub fn elem_sym_grad(lambda: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = lambda.len();
    if k == 0 || k > n {
        return Err(invalid(format!("gradient needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if n > MAX_DIM {
        return Err(invalid(format!("vector length {n} exceeds {MAX_DIM}")));
    }
    Ok((0..n).map(|i| elem_sym_without(lambda, i, k - 1)).collect())
}

/// Membership in the open Gårding cone `Γ_k`.
pub fn in_gamma_k(lambda: &[f64], k: usize) -> bool {
    if k == 0 {
        return true;
    }
    let k = k.min(lambda.len());
    elem_sym_all(lambda, k)[1..].iter().all(|&s| s > 0.0)
}

/// Smallest value of `S_j`, `j = 1..=k`.
pub fn gamma_k_margin(lambda: &[f64], k: usize) -> f64 {
    elem_sym_all(lambda, k)[1..]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `max_i S_{k-1}(a)|_{a_i = 0} * a_i`.
pub fn h_k(a: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > a.len() {
        return Err(invalid(format!("h_k needs 1 <= k <= n, got k = {k}")));
    }
    Ok((0..a.len())
        .map(|i| elem_sym_without(a, i, k - 1) * a[i])
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `(C(n,k))^{-1/k}`, the multiple of the identity with `S_k = 1`.
pub fn a_star(n: usize, k: usize) -> f64 {
    binomial(n, k).powf(-1.0 / k as f64)
}

/// Shift `lambda` along the diagonal direction until every `S_j`, `j <= k`,
/// is at least `margin`. Returns the shift (0 when already inside).
pub fn project_into_gamma_k(lambda: &mut [f64], k: usize, margin: f64) -> f64 {
    if gamma_k_margin(lambda, k) >= margin {
        return 0.0;
    }
    let shifted = |lambda: &[f64], t: f64| -> f64 {
        let l: Vec<f64> = lambda.iter().map(|v| v + t).collect();
        gamma_k_margin(&l, k)
    };
    let min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    // beyond this shift every entry is positive and S_j grows monotonically
    let mut hi = (-min).max(0.0) + margin.powf(1.0 / k as f64) + 1e-300;
    while shifted(lambda, hi) < margin {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shifted(lambda, mid) >= margin {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    for v in lambda.iter_mut() {
        *v += hi;
    }
    hi
}

/// `S_k` of a symmetric matrix together with the spectral data needed for
/// linearisation.
#[derive(Debug, Clone)]
pub struct HessianSk {
    pub value: f64,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `S_k^{ij} = ∂S_k / ∂H_ij`, i.e. `Σ_m g_m v_m v_mᵀ`.
    pub deriv: DMatrix<f64>,
}

pub fn sk_of_hessian(h: &DMatrix<f64>, k: usize) -> Result<HessianSk> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(invalid("Hessian must be square"));
    }
    if k == 0 || k > n {
        return Err(invalid(format!("k = {k} out of range for n = {n}")));
    }
    let asym = (h - h.transpose()).abs().max();
    if asym > ASYMMETRY_TOL {
        return Err(invalid(format!("Hessian asymmetry {asym:e} exceeds {ASYMMETRY_TOL:e}")));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let value = elem_sym(&lambda, k)?;
    let g = elem_sym_grad(&lambda, k)?;
    let v = &eig.eigenvectors;
    let mut deriv = DMatrix::zeros(n, n);
    for (m, gm) in g.iter().enumerate() {
        let col = v.column(m);
        deriv += *gm * col * col.transpose();
    }
    Ok(HessianSk {
        value,
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
        deriv,
    })
}

/// Problem dimensions together with a diagonal `A ∈ 𝒜_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymSpec {
    pub n: usize,
    pub k: usize,
    pub a: Vec<f64>,
    pub a_star: f64,
    pub h_k_a: f64,
}

impl SymSpec {
    /// Validates `a` as given; it must already satisfy `S_k(a) = 1`.
    pub fn new(k: usize, a: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if n < 3 {
            return Err(LabError::InvalidSpec(format!("n = {n} < 3")));
        }
        if k == 0 || k > n {
            return Err(LabError::InvalidSpec(format!("k = {k} not in [1, {n}]")));
        }
        if a.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(LabError::InvalidSpec("diagonal entries must be positive".into()));
        }
        let sk = elem_sym(&a, k)?;
        if (sk - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidSpec(format!("S_k(a) = {sk} != 1")));
        }
        if k == 1 {
            let max = a.iter().copied().fold(0.0, f64::max);
            if max >= 0.5 {
                return Err(LabError::InvalidSpec(format!(
                    "k = 1 requires lambda_max(A) < 1/2, got {max}"
                )));
            }
        }
        let h = h_k(&a, k)?;
        let ratio = k as f64 / (2.0 * h);
        if !(ratio > 1.0 && ratio <= n as f64 / 2.0 + 1e-12) {
            return Err(LabError::InvalidSpec(format!(
                "k/(2 h_k) = {ratio} outside (1, n/2]"
            )));
        }
        Ok(Self {
            n,
            k,
            a,
            a_star: a_star(n, k),
            h_k_a: h,
        })
    }

    /// Rescales positive `raw` by `S_k(raw)^{-1/k}` and validates.
    pub fn normalized(k: usize, raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|&v| !(v > 0.0)) {
            return Err(LabError::InvalidSpec("diagonal entries must be positive".into()));
        }
        if k == 0 || k > raw.len() {
            return Err(LabError::InvalidSpec(format!("k = {k} out of range")));
        }
        let s = elem_sym(raw, k)?;
        let scale = s.powf(-1.0 / k as f64);
        let mut a: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        // one Newton polish so that S_k(a) = 1 to rounding
        let s2 = elem_sym(&a, k)?;
        let polish = s2.powf(-1.0 / k as f64);
        a.iter_mut().for_each(|v| *v *= polish);
        Self::new(k, a)
    }

    /// `A = a*·I`.
    pub fn isotropic(n: usize, k: usize) -> Result<Self> {
        Self::normalized(k, &vec![1.0; n])
    }

    /// Decay exponent `k / (2 h_k(a))` of the subsolution correction.
    pub fn exponent(&self) -> f64 {
        self.k as f64 / (2.0 * self.h_k_a)
    }

    pub fn lambda_max(&self) -> f64 {
        self.a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `½ xᵀ A x`.
    pub fn s_of(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(&self.a).map(|(xi, ai)| ai * xi * xi).sum::<f64>()
    }
}

/// Draws a diagonal `a ∈ 𝒜_k` by rescaling positive entries; for `k = 1`
/// draws are rejected until `max a_i < 1/2`.
pub fn sample_admissible<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> SymSpec {
    loop {
        let raw: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
        if let Ok(spec) = SymSpec::normalized(k, &raw) {
            return spec;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn subset_sum(lambda: &[f64], k: usize) -> f64 {
        let n = lambda.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == k {
                total += (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| lambda[i])
                    .product::<f64>();
            }
        }
        total
    }

    #[test]
    fn small_values() {
        assert_eq!(elem_sym(&[1.0; 4], 2).unwrap(), 6.0);
        assert_eq!(elem_sym(&[1.0, 2.0, 3.0], 2).unwrap(), subset_sum(&[1.0, 2.0, 3.0], 2));
        assert_eq!(elem_sym(&[1.0, 2.0, 3.0], 2).unwrap(), 11.0);
        assert_eq!(elem_sym(&[7.0, -2.0], 0).unwrap(), 1.0);
        assert!(elem_sym(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(elem_sym_grad(&[1.0, 2.0, 3.0], 2).unwrap(), vec![5.0, 4.0, 3.0]);
        assert_eq!(elem_sym_grad(&[0.7; 5], 1).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn cone_examples() {
        assert!(in_gamma_k(&[1.0, 1.0, 1.0], 3));
        assert!(!in_gamma_k(&[-1.0, -1.0, -1.0], 1));
        assert!(in_gamma_k(&[3.0, 3.0, -1.0], 2));
        assert!(!in_gamma_k(&[3.0, 3.0, -1.0], 3));
    }

    #[test]
    fn h_k_examples() {
        assert_eq!(h_k(&[0.4, 0.4, 0.2], 1).unwrap(), 0.4);
        let spec = SymSpec::normalized(1, &[0.4, 0.4, 0.2]).unwrap();
        assert!((spec.exponent() - 1.25).abs() < 1e-12);
        let iso = SymSpec::isotropic(4, 2).unwrap();
        assert!((iso.a_star - 6f64.powf(-0.5)).abs() < 1e-15);
        assert!((iso.h_k_a - 0.5).abs() < 1e-12);
        assert!((iso.exponent() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spec_rejections() {
        // k = 1 with lambda_max >= 1/2
        assert!(SymSpec::normalized(1, &[0.9, 0.05, 0.05]).is_err());
        assert!(SymSpec::new(1, vec![0.5, 0.3, 0.3]).is_err());
        assert!(SymSpec::new(2, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn hessian_examples() {
        let a = a_star(3, 1);
        let h = DMatrix::identity(3, 3) * a;
        assert!((sk_of_hessian(&h, 1).unwrap().value - 1.0).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!((sk_of_hessian(&d, 3).unwrap().value - 6.0).abs() < 1e-12);
        let mut bad = DMatrix::identity(3, 3);
        bad[(0, 1)] = 1e-6;
        assert!(sk_of_hessian(&bad, 2).is_err());
    }

    #[test]
    fn derivative_matrix_matches_finite_differences() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 1.0]);
        let ev = sk_of_hessian(&h, 2).unwrap();
        let d = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut hp = h.clone();
                let mut hm = h.clone();
                hp[(i, j)] += d;
                hm[(i, j)] -= d;
                if i != j {
                    hp[(j, i)] += d;
                    hm[(j, i)] -= d;
                }
                let fd = (sk_of_hessian(&hp, 2).unwrap().value - sk_of_hessian(&hm, 2).unwrap().value)
                    / (2.0 * d);
                let expect = if i == j { ev.deriv[(i, i)] } else { 2.0 * ev.deriv[(i, j)] };
                assert!((fd - expect).abs() < 1e-7, "({i},{j}) {fd} vs {expect}");
            }
        }
    }

    #[test]
    fn projection_reaches_margin() {
        let mut l = vec![1.0, -2.0, 0.5];
        let shift = project_into_gamma_k(&mut l, 2, 1e-8);
        assert!(shift > 0.0);
        assert!(gamma_k_margin(&l, 2) >= 1e-8);
        let mut inside = vec![1.0, 1.0, 1.0];
        assert_eq!(project_into_gamma_k(&mut inside, 3, 1e-8), 0.0);
    }

    proptest! {
        #[test]
        fn recursion_against_enumeration(
            v in proptest::collection::vec(-3.0f64..3.0, 2..8),
            k in 1usize..8,
            i in 0usize..8,
        ) {
            let n = v.len();
            let k = k.min(n);
            let i = i % n;
            let full = elem_sym(&v, k).unwrap();
            prop_assert!((full - subset_sum(&v, k)).abs() <= 1e-10 * (1.0 + full.abs()));
            let without = elem_sym_without(&v, i, k);
            let without_m1 = elem_sym_without(&v, i, k - 1);
            prop_assert!((full - (without + v[i] * without_m1)).abs() <= 1e-10 * (1.0 + full.abs()));
        }

        #[test]
        fn euler_identity(v in proptest::collection::vec(-2.0f64..2.0, 3..10), k in 1usize..10) {
            let k = k.min(v.len());
            let g = elem_sym_grad(&v, k).unwrap();
            let lhs: f64 = v.iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs = k as f64 * elem_sym(&v, k).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn cone_nesting(v in proptest::collection::vec(-1.0f64..3.0, 3..8), k in 1usize..8) {
            let k = k.min(v.len());
            if in_gamma_k(&v, k) {
                for j in 1..k {
                    prop_assert!(in_gamma_k(&v, j));
                }
            }
        }

        #[test]
        fn spectral_invariance(seed in 0u64..1000) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5);
            let h = &m + m.transpose();
            let q = m.clone().qr().q();
            let rotated = &q * &h * q.transpose();
            let rotated = (&rotated + rotated.transpose()) * 0.5;
            for k in 1..=4 {
                let a = sk_of_hessian(&h, k).unwrap().value;
                let b = sk_of_hessian(&rotated, k).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
        }
    }
}
