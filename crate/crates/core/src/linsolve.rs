//! Sparse linear solves: a direct LU (faer) and preconditioned BiCGSTAB.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Square matrix in compressed-row form with sorted, merged columns.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col = Vec::new();
        let mut val = Vec::new();
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let start = col.len();
            for (c, v) in r {
                if col.len() > start && *col.last().unwrap() == c {
                    *val.last_mut().unwrap() += v;
                } else {
                    col.push(c);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Self { n, row_ptr, col, val }
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[p] * x[self.col[p]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&p| self.col[p] == i)
                    .map_or(0.0, |p| self.val[p])
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    Jacobi,
    Ilu0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LinearSolver {
    Direct,
    Bicgstab {
        precond: Preconditioner,
        /// relative residual target
        rel_tol: f64,
        max_iter: usize,
    },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Direct
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

pub fn solve(a: &CsrMatrix, b: &[f64], method: &LinearSolver, x0: Option<&[f64]>) -> Result<(Vec<f64>, LinearStats)> {
    match *method {
        LinearSolver::Direct => direct(a, b),
        LinearSolver::Bicgstab {
            precond,
            rel_tol,
            max_iter,
        } => bicgstab(a, b, precond, rel_tol, max_iter, x0),
    }
}

fn direct(a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, LinearStats)> {
    let n = a.n;
    let mut trip = Vec::with_capacity(a.nnz());
    for i in 0..n {
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            trip.push(Triplet::new(i, a.col[p], a.val[p]));
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| LabError::SolverFailed(format!("sparse assembly: {e:?}")))?;
    let lu = m
        .sp_lu()
        .map_err(|e| LabError::SolverFailed(format!("sparse LU: {e:?}")))?;
    let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    let sol = lu.solve(&rhs);
    let x: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LabError::SolverFailed("sparse LU produced non-finite values".into()));
    }
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    let res = r.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    Ok((
        x,
        LinearStats {
            iterations: 1,
            relative_residual: res / bn,
        },
    ))
}

/// Incomplete LU with the sparsity of `A`.
struct Ilu0 {
    a: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let mut f = a.clone();
        let n = f.n;
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for p in f.row_ptr[i]..f.row_ptr[i + 1] {
                if f.col[p] == i {
                    diag_pos[i] = p;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(LabError::SolverFailed(format!("ILU0: missing diagonal in row {i}")));
            }
        }
        let mut where_col = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (f.row_ptr[i], f.row_ptr[i + 1]);
            for p in s..e {
                where_col[f.col[p]] = p;
            }
            for p in s..e {
                let k = f.col[p];
                if k >= i {
                    break;
                }
                let piv = f.val[diag_pos[k]];
                f.val[p] /= piv;
                let lik = f.val[p];
                for q in (diag_pos[k] + 1)..f.row_ptr[k + 1] {
                    let j = f.col[q];
                    let w = where_col[j];
                    if w != usize::MAX {
                        f.val[w] -= lik * f.val[q];
                    }
                }
            }
            for p in s..e {
                where_col[f.col[p]] = usize::MAX;
            }
            if f.val[diag_pos[i]] == 0.0 {
                return Err(LabError::SolverFailed(format!("ILU0: zero pivot in row {i}")));
            }
        }
        Ok(Self { a: f, diag_pos })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let f = &self.a;
        let n = f.n;
        for i in 0..n {
            let mut acc = r[i];
            for p in f.row_ptr[i]..self.diag_pos[i] {
                acc -= f.val[p] * z[f.col[p]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for p in (self.diag_pos[i] + 1)..f.row_ptr[i + 1] {
                acc -= f.val[p] * z[f.col[p]];
            }
            z[i] = acc / f.val[self.diag_pos[i]];
        }
    }
}

enum Precond {
    Jacobi(Vec<f64>),
    Ilu(Ilu0),
}

impl Precond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Jacobi(d) => {
                for i in 0..r.len() {
                    z[i] = r[i] * d[i];
                }
            }
            Precond::Ilu(f) => f.apply(r, z),
        }
    }
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    precond: Preconditioner,
    rel_tol: f64,
    max_iter: usize,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, LinearStats)> {
    let n = a.n;
    let m = match precond {
        Preconditioner::Jacobi => Precond::Jacobi(
            a.diagonal()
                .iter()
                .map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        ),
        Preconditioner::Ilu0 => Precond::Ilu(Ilu0::new(a)?),
    };
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bn = dotp(b, b).sqrt().max(f64::MIN_POSITIVE);
    let target = rel_tol * bn;
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rn = dotp(&r, &r).sqrt();
    let mut it = 0;
    while rn > target && it < max_iter {
        it += 1;
        let rho_new = dotp(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(LabError::SolverFailed("BiCGSTAB breakdown".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut y);
        a.matvec(&y, &mut v);
        alpha = rho / dotp(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dotp(&s, &s).sqrt() <= target {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            rn = dotp(&s, &s).sqrt();
            r.copy_from_slice(&s);
            break;
        }
        m.apply(&s, &mut z);
        a.matvec(&z, &mut t);
        omega = dotp(&t, &s) / dotp(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rn = dotp(&r, &r).sqrt();
    }
    if !(rn <= target) {
        return Err(LabError::SolverFailed(format!(
            "BiCGSTAB stalled at relative residual {:.3e} after {it} iterations",
            rn / bn
        )));
    }
    Ok((
        x,
        LinearStats {
            iterations: it,
            relative_residual: rn / bn,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2-D convection–diffusion on an m×m grid (nonsymmetric).
    fn test_matrix(m: usize) -> CsrMatrix {
        let idx = |i: usize, j: usize| i * m + j;
        let mut rows = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let mut r = vec![(idx(i, j), 4.0)];
                if i > 0 {
                    r.push((idx(i - 1, j), -1.2));
                }
                if i + 1 < m {
                    r.push((idx(i + 1, j), -0.8));
                }
                if j > 0 {
                    r.push((idx(i, j - 1), -1.0));
                }
                if j + 1 < m {
                    r.push((idx(i, j + 1), -1.0));
                }
                rows.push(r);
            }
        }
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn duplicates_merge() {
        let a = CsrMatrix::from_rows(vec![vec![(1, 1.0), (0, 2.0), (1, 0.5)], vec![(1, 3.0)]]);
        assert_eq!(a.col, vec![0, 1, 1]);
        assert_eq!(a.val, vec![2.0, 1.5, 3.0]);
    }

    #[test]
    fn solvers_agree() {
        let a = test_matrix(30);
        let x_true: Vec<f64> = (0..a.n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let mut b = vec![0.0; a.n];
        a.matvec(&x_true, &mut b);
        let (xd, sd) = solve(&a, &b, &LinearSolver::Direct, None).unwrap();
        assert!(sd.relative_residual < 1e-13);
        for precond in [Preconditioner::Jacobi, Preconditioner::Ilu0] {
            let m = LinearSolver::Bicgstab {
                precond,
                rel_tol: 1e-12,
                max_iter: 2000,
            };
            let (xi, _) = solve(&a, &b, &m, None).unwrap();
            for ((p, q), t) in xd.iter().zip(&xi).zip(&x_true) {
                assert!((p - t).abs() < 1e-10 && (q - t).abs() < 1e-9);
            }
        }
    }
}
