//! Sparse SPD solvers used by the discrete operators.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Banded Cholesky factor `A = R Rᵀ` stored row-wise over the lower band.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // row i holds entries (i, i-bw) .. (i, i)
    l: Vec<f64>,
    min_pivot: f64,
}

impl BandCholesky {
    /// Factor the SPD matrix given by `entry(i, j)` for `i - bw <= j <= i`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = entry(i, j);
                for k in k0..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::SolverBreakdown(format!(
                            "nonpositive pivot {s:e} at row {i}"
                        )));
                    }
                    let p = s.sqrt();
                    min_pivot = min_pivot.min(s);
                    l[at(i, i)] = p;
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(BandCholesky { n, bw, l, min_pivot })
    }

    /// Smallest Cholesky pivot; positive for an SPD matrix.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[at(i, k)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.l[at(k, i)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    /// Smallest Ritz value of the preconditioned operator.
    pub min_ritz: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Iterations without a new best residual before CG gives up.
const STALL_PATIENCE: usize = 200;

/// Jacobi-preconditioned conjugate gradients.
///
/// Stops at `rel_tol` or when the residual stagnates; the Lanczos
/// coefficients collected along the way give the Ritz certificate.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x0: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
            min_ritz: f64::NAN,
        });
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut best = (dot(&r, &r).sqrt() / bnorm, x.clone());
    let mut since_best = 0;
    let mut it = 0;
    while it < max_iter && best.0 > rel_tol {
        apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::SolverBreakdown(format!(
                "operator not positive definite (pAp = {pq:e})"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        alphas.push(alpha);
        betas.push(beta);
        it += 1;
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel < best.0 {
            best = (rel, x.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > STALL_PATIENCE {
                break;
            }
        }
    }
    Ok(CgOutcome {
        x: best.1,
        iterations: it,
        rel_residual: best.0,
        min_ritz: lanczos_min_ritz(&alphas, &betas),
    })
}

/// Smallest eigenvalue of the Lanczos tridiagonal built from CG coefficients.
fn lanczos_min_ritz(alphas: &[f64], betas: &[f64]) -> f64 {
    let k = alphas.len();
    if k == 0 {
        return f64::NAN;
    }
    let diag: Vec<f64> = (0..k)
        .map(|j| 1.0 / alphas[j] + if j == 0 { 0.0 } else { betas[j - 1] / alphas[j - 1] })
        .collect();
    let off: Vec<f64> = (0..k - 1).map(|j| betas[j].sqrt() / alphas[j]).collect();
    tridiagonal_min_eigen(&diag, &off)
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by Sturm-count
/// bisection.
pub fn tridiagonal_min_eigen(diag: &[f64], off: &[f64]) -> f64 {
    let k = diag.len();
    let radius = |j: usize| {
        (if j > 0 { off[j - 1].abs() } else { 0.0 }) + (if j + 1 < k { off[j].abs() } else { 0.0 })
    };
    let mut lo = (0..k).map(|j| diag[j] - radius(j)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..k).map(|j| diag[j] + radius(j)).fold(f64::NEG_INFINITY, f64::max);
    // Number of eigenvalues below x.
    let below = |x: f64| {
        let mut count = 0;
        let mut q = 1.0;
        for j in 0..k {
            let o2 = if j > 0 { off[j - 1] * off[j - 1] } else { 0.0 };
            q = diag[j] - x - if j > 0 { o2 / q } else { 0.0 };
            if q == 0.0 {
                q = f64::EPSILON * (x.abs() + 1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eigen-decomposition of a small dense symmetric matrix (ascending order).
pub fn symmetric_eigen(t: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = t.nrows();
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}
