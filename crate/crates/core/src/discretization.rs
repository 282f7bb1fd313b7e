//! Dirichlet Laplacian, quadratures, spectrum and the L⁴ Sobolev constant.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, BandCholesky};
use crate::model::{Field, Grid};

/// Which SPD solver to use for `(−Δ_h + diag(q)) x = b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Banded Cholesky when the band fits in memory, otherwise CG.
    #[default]
    Auto,
    Direct,
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSolverOptions {
    pub kind: SolverKind,
    pub cg_rel_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for LinearSolverOptions {
    fn default() -> Self {
        LinearSolverOptions {
            kind: SolverKind::Auto,
            cg_rel_tol: 1e-12,
            cg_max_iter: 20_000,
        }
    }
}

/// Upper bound on `node_count * bandwidth` for the direct path.
const DIRECT_BAND_LIMIT: usize = 8_000_000;

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    /// Positive for an SPD operator: smallest pivot (direct) or Ritz value (CG).
    pub spd_certificate: f64,
}

/// Matrix-free second-order −Δ with zero Dirichlet data.
#[derive(Clone, Debug)]
pub struct LaplacianOp {
    pub grid: Grid,
    /// 1/h_a² per axis.
    pub stencil: Vec<f64>,
    strides: Vec<usize>,
    factor: Arc<OnceLock<Option<BandCholesky>>>,
}

impl PartialEq for LaplacianOp {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
    }
}

impl LaplacianOp {
    pub fn new(grid: &Grid) -> LaplacianOp {
        LaplacianOp {
            stencil: grid.spacings.iter().map(|h| 1.0 / (h * h)).collect(),
            strides: grid.strides(),
            grid: grid.clone(),
            factor: Arc::new(OnceLock::new()),
        }
    }

    pub fn n(&self) -> usize {
        self.grid.node_count
    }

    pub fn bandwidth(&self) -> usize {
        self.strides[0]
    }

    /// Diagonal of −Δ_h (constant).
    pub fn diagonal(&self) -> f64 {
        2.0 * self.stencil.iter().sum::<f64>()
    }

    fn apply_raw(&self, u: &[f64], out: &mut [f64]) {
        let d = self.diagonal();
        for (o, x) in out.iter_mut().zip(u) {
            *o = d * x;
        }
        for a in 0..self.grid.dim {
            let (s, n, w) = (self.strides[a], self.grid.sizes[a], self.stencil[a]);
            for i in 0..u.len() {
                let ia = (i / s) % n;
                let mut nb = 0.0;
                if ia > 0 {
                    nb += u[i - s];
                }
                if ia + 1 < n {
                    nb += u[i + s];
                }
                out[i] -= w * nb;
            }
        }
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        self.grid.check(u)?;
        let mut out = vec![0.0; u.len()];
        self.apply_raw(&u.values, &mut out);
        Ok(Field { values: out })
    }

    fn use_direct(&self, kind: SolverKind) -> bool {
        match kind {
            SolverKind::Direct => true,
            SolverKind::Cg => false,
            SolverKind::Auto => self.n().saturating_mul(self.bandwidth() + 1) <= DIRECT_BAND_LIMIT,
        }
    }

    fn factor_shifted(&self, q: Option<&[f64]>) -> Result<BandCholesky> {
        let d = self.diagonal();
        let bw = self.bandwidth();
        BandCholesky::factor(self.n(), bw, |i, j| {
            if i == j {
                d + q.map_or(0.0, |q| q[i])
            } else {
                let off = i - j;
                for a in 0..self.grid.dim {
                    if off == self.strides[a] && (i / self.strides[a]) % self.grid.sizes[a] > 0 {
                        return -self.stencil[a];
                    }
                }
                0.0
            }
        })
    }

    /// Solve `(−Δ_h + diag(q)) x = b` with `q ≥ 0`.
    pub fn solve_shifted(
        &self,
        q: Option<&[f64]>,
        b: &[f64],
        x0: Option<&[f64]>,
        opts: &LinearSolverOptions,
    ) -> Result<SolveOutcome> {
        if b.len() != self.n() {
            return Err(Error::GridMismatch {
                expected: self.n(),
                found: b.len(),
            });
        }
        if self.use_direct(opts.kind) {
            let owned;
            let f = match q {
                None => {
                    let cached = self.factor.get_or_init(|| self.factor_shifted(None).ok());
                    cached
                        .as_ref()
                        .ok_or_else(|| Error::SolverBreakdown("Laplacian factorization failed".into()))?
                }
                Some(q) => {
                    owned = self.factor_shifted(Some(q))?;
                    &owned
                }
            };
            let x = f.solve(b);
            Ok(SolveOutcome {
                x,
                iterations: 1,
                rel_residual: 0.0,
                spd_certificate: f.min_pivot(),
            })
        } else {
            let d = self.diagonal();
            let diag: Vec<f64> = (0..self.n()).map(|i| d + q.map_or(0.0, |q| q[i])).collect();
            let apply = |x: &[f64], y: &mut [f64]| {
                self.apply_raw(x, y);
                if let Some(q) = q {
                    for i in 0..x.len() {
                        y[i] += q[i] * x[i];
                    }
                }
            };
            let out = linalg::pcg(apply, &diag, b, x0, opts.cg_rel_tol, opts.cg_max_iter)?;
            if !(out.rel_residual <= opts.cg_rel_tol.sqrt()) {
                return Err(Error::SolverBreakdown(format!(
                    "CG stalled at relative residual {:e}",
                    out.rel_residual
                )));
            }
            Ok(SolveOutcome {
                x: out.x,
                iterations: out.iterations,
                rel_residual: out.rel_residual,
                spd_certificate: out.min_ritz,
            })
        }
    }

    /// L⁻¹ b with the default solver.
    pub fn solve(&self, b: &Field) -> Result<Field> {
        self.grid.check(b)?;
        let out = self.solve_shifted(None, &b.values, None, &LinearSolverOptions::default())?;
        Ok(Field { values: out.x })
    }
}

pub fn inner_l2(grid: &Grid, u: &Field, v: &Field) -> Result<f64> {
    grid.check(u)?;
    grid.check(v)?;
    Ok(linalg::dot(&u.values, &v.values) * grid.cell_volume())
}

pub fn inner_h1(op: &LaplacianOp, u: &Field, v: &Field) -> Result<f64> {
    inner_l2(&op.grid, &op.apply(u)?, v)
}

pub fn norm_h1(op: &LaplacianOp, u: &Field) -> Result<f64> {
    Ok(inner_h1(op, u, u)?.max(0.0).sqrt())
}

pub fn norm_lp(grid: &Grid, u: &Field, p: f64) -> Result<f64> {
    grid.check(u)?;
    if p == f64::INFINITY {
        return Ok(u.max_abs());
    }
    let vol = grid.cell_volume();
    let s: f64 = match p {
        1.0 => u.values.iter().map(|x| x.abs()).sum(),
        2.0 => u.values.iter().map(|x| x * x).sum(),
        4.0 => u.values.iter().map(|x| (x * x) * (x * x)).sum(),
        6.0 => u.values.iter().map(|x| (x * x) * (x * x) * (x * x)).sum(),
        _ => return Err(Error::UnsupportedNorm(p)),
    };
    Ok((s * vol).powf(1.0 / p))
}

/// Dual norm sup ⟨r, v⟩/‖v‖_{H¹} of the functional v ↦ ⟨r, v⟩_{L²}.
pub fn dual_norm(op: &LaplacianOp, r: &Field) -> Result<f64> {
    let z = op.solve(r)?;
    Ok(inner_l2(&op.grid, r, &z)?.max(0.0).sqrt())
}

/// Lowest Dirichlet eigenpairs of the discrete −Δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    pub grid: Grid,
    pub eigenvalues: Vec<f64>,
    pub fields: Vec<Field>,
    /// `gaps[j]` is true when Λ_{j+1} < Λ_{j+2} (1-based), i.e. eigenvalue
    /// `j+1` is strictly below the next one.
    pub gaps: Vec<bool>,
}

/// Relative separation below which two eigenvalues count as equal.
pub const GAP_REL_TOL: f64 = 1e-8;

impl SpectralBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Λ_k with 1-based k.
    pub fn lambda(&self, k: usize) -> f64 {
        self.eigenvalues[k - 1]
    }

    /// φ_k with 1-based k.
    pub fn phi(&self, k: usize) -> &Field {
        &self.fields[k - 1]
    }

    /// Whether Λ_k < Λ_{k+1} (1-based); false if k+1 is not available.
    pub fn has_gap(&self, k: usize) -> bool {
        k >= 1 && k < self.len() && self.gaps[k - 1]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["k", "lambda_k"])?;
        for (k, l) in self.eigenvalues.iter().enumerate() {
            w.write_record([(k + 1).to_string(), format!("{l:.17e}")])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = linalg::dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = linalg::dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// One Lanczos run on L⁻¹ deflated against `locked`; returns Ritz pairs
/// (eigenvalue of L, unit Euclidean vector) sorted ascending in eigenvalue.
fn lanczos_round(
    op: &LaplacianOp,
    locked: &[Vec<f64>],
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = op.n();
    let mut q: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    orthonormalize_against(&mut q, locked);
    if normalize(&mut q) == 0.0 {
        return Ok(Vec::new());
    }
    let opts = LinearSolverOptions::default();
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..steps {
        let mut w = op.solve_shifted(None, &basis[j], None, &opts)?.x;
        orthonormalize_against(&mut w, locked);
        let a = linalg::dot(&w, &basis[j]);
        alpha.push(a);
        orthonormalize_against(&mut w, &basis);
        let b = normalize(&mut w);
        if j + 1 == steps || b <= 1e-14 * a.abs().max(1e-300) {
            break;
        }
        beta.push(b);
        basis.push(w);
    }
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let (vals, vecs) = linalg::symmetric_eigen(t);
    let mut out = Vec::new();
    for c in (0..k).rev() {
        let theta = vals[c];
        if theta <= 0.0 {
            continue;
        }
        let mut y = vec![0.0; n];
        for (i, b) in basis.iter().enumerate().take(k) {
            let s = vecs[(i, c)];
            for (yy, bb) in y.iter_mut().zip(b) {
                *yy += s * bb;
            }
        }
        normalize(&mut y);
        out.push((1.0 / theta, y));
    }
    Ok(out)
}

fn eigen_residual(op: &LaplacianOp, y: &[f64]) -> (f64, f64) {
    let mut ly = vec![0.0; y.len()];
    op.apply_raw(y, &mut ly);
    let lam = linalg::dot(&ly, y) / linalg::dot(y, y);
    let r: f64 = ly
        .iter()
        .zip(y)
        .map(|(a, b)| (a - lam * b).powi(2))
        .sum::<f64>()
        .sqrt();
    (lam, r / lam)
}

/// First `k_count` eigenpairs of the discrete −Δ, L²-orthonormal.
pub fn eigenpairs(op: &LaplacianOp, k_count: usize) -> Result<SpectralBasis> {
    let n = op.n();
    if k_count == 0 || k_count > n {
        return Err(Error::InvalidParams(format!(
            "requested {k_count} eigenpairs on {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2c);
    let tol = 1e-9;
    let steps = (2 * k_count + 40).min(n);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut locked_vals: Vec<f64> = Vec::new();
    let max_rounds = k_count + 20;
    let mut rounds = 0;
    loop {
        if rounds == max_rounds {
            return Err(Error::EigenNoConvergence(rounds));
        }
        rounds += 1;
        let budget = steps.min(n - locked.len());
        if budget == 0 {
            break;
        }
        let ritz = lanczos_round(op, &locked, budget, &mut rng)?;
        let mut kth = if locked_vals.len() >= k_count {
            let mut s = locked_vals.clone();
            s.sort_by(f64::total_cmp);
            s[k_count - 1]
        } else {
            f64::INFINITY
        };
        let mut added = 0;
        let mut lowest_unlocked = f64::INFINITY;
        for (_, mut y) in ritz {
            orthonormalize_against(&mut y, &locked);
            if normalize(&mut y) == 0.0 {
                continue;
            }
            let (lam, res) = eigen_residual(op, &y);
            if res <= tol {
                if lam <= kth * (1.0 + GAP_REL_TOL) || locked.len() < k_count {
                    locked.push(y);
                    locked_vals.push(lam);
                    added += 1;
                    if locked_vals.len() >= k_count {
                        let mut s = locked_vals.clone();
                        s.sort_by(f64::total_cmp);
                        kth = s[k_count - 1];
                    }
                }
            } else {
                lowest_unlocked = lowest_unlocked.min(lam);
                break;
            }
        }
        if locked.len() >= k_count && added == 0 && lowest_unlocked > kth * (1.0 + GAP_REL_TOL) {
            break;
        }
        if locked.len() >= k_count && added == 0 && lowest_unlocked.is_infinite() {
            break;
        }
    }
    let mut order: Vec<usize> = (0..locked.len()).collect();
    order.sort_by(|&a, &b| locked_vals[a].total_cmp(&locked_vals[b]));
    order.truncate(k_count);

    let vol = op.grid.cell_volume();
    let scale = 1.0 / vol.sqrt();
    let mut fields = Vec::with_capacity(k_count);
    let mut eigenvalues = Vec::with_capacity(k_count);
    let mut done: Vec<Vec<f64>> = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let mut y = locked[i].clone();
        orthonormalize_against(&mut y, &done);
        normalize(&mut y);
        if rank == 0 {
            if y.iter().sum::<f64>() < 0.0 {
                y.iter_mut().for_each(|x| *x = -*x);
            }
        } else {
            let big = y.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if let Some(first) = y.iter().find(|x| x.abs() >= 0.5 * big) {
                if *first < 0.0 {
                    y.iter_mut().for_each(|x| *x = -*x);
                }
            }
        }
        let (lam, _) = eigen_residual(op, &y);
        eigenvalues.push(lam);
        done.push(y.clone());
        fields.push(Field {
            values: y.iter().map(|x| x * scale).collect(),
        });
    }
    let gaps = eigenvalues
        .windows(2)
        .map(|w| w[1] - w[0] > GAP_REL_TOL * w[1])
        .collect();
    Ok(SpectralBasis {
        grid: op.grid.clone(),
        eigenvalues,
        fields,
        gaps,
    })
}

/// Closed-form eigenvalue of the discrete −Δ on a box for a multi-index.
pub fn analytic_discrete_eigenvalue(grid: &Grid, modes: &[usize]) -> f64 {
    modes
        .iter()
        .enumerate()
        .map(|(a, &k)| {
            let h = grid.spacings[a];
            let s = (k as f64 * std::f64::consts::PI * h / (2.0 * grid.lengths[a])).sin();
            4.0 / (h * h) * s * s
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for SobolevOptions {
    fn default() -> Self {
        SobolevOptions {
            starts: 6,
            seed: 17,
            max_iter: 4000,
            rel_tol: 1e-14,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevEstimate {
    /// Best ‖∇u‖ / ‖u‖_{L⁴} found.
    pub value: f64,
    pub converged: bool,
    pub starts: usize,
    pub iterations: usize,
}

/// ‖∇u‖² / ‖u‖₄² for a nonzero field.
pub fn sobolev_ratio_sq(op: &LaplacianOp, u: &Field) -> Result<f64> {
    let k = inner_h1(op, u, u)?;
    let q = norm_lp(&op.grid, u, 4.0)?;
    Ok(k / (q * q))
}

fn descend_sobolev(op: &LaplacianOp, mut u: Field, opts: &SobolevOptions) -> Result<(f64, bool, usize)> {
    let grid = &op.grid;
    let mut f = sobolev_ratio_sq(op, &u)?;
    let mut stall = 0;
    for it in 0..opts.max_iter {
        let n4 = norm_lp(grid, &u, 4.0)?;
        u = u.scaled(1.0 / n4);
        let cube = Field {
            values: u.values.iter().map(|x| x * x * x).collect(),
        };
        let z = op.solve(&cube)?;
        // H¹ gradient of the quotient on the unit L⁴ sphere, up to a factor 2.
        let g = u.axpy(-f, &z);
        let mut s = 1.0;
        let mut accepted = None;
        while s > 1e-8 {
            let cand = u.axpy(-s, &g);
            let fc = sobolev_ratio_sq(op, &cand)?;
            if fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            return Ok((f, true, it));
        };
        let dec = f - fc;
        u = cand;
        f = fc;
        if dec <= opts.rel_tol * f {
            stall += 1;
            if stall >= 3 {
                return Ok((f, true, it + 1));
            }
        } else {
            stall = 0;
        }
    }
    Ok((f, false, opts.max_iter))
}

fn sobolev_start(grid: &Grid, idx: usize, rng: &mut ChaCha8Rng) -> Field {
    let pi = std::f64::consts::PI;
    if idx == 0 {
        return Field::from_fn(grid, |x| {
            x.iter()
                .zip(&grid.lengths)
                .map(|(xa, l)| (pi * xa / l).sin())
                .product()
        });
    }
    let modes = 4usize;
    let terms = modes.pow(grid.dim as u32);
    let mut coeffs: Vec<(Vec<usize>, f64)> = Vec::with_capacity(terms);
    for t in 0..terms {
        let mut mi = Vec::with_capacity(grid.dim);
        let mut r = t;
        for _ in 0..grid.dim {
            mi.push(r % modes + 1);
            r /= modes;
        }
        let sq: usize = mi.iter().map(|k| k * k).sum();
        let a: f64 = rng.sample::<f64, _>(StandardNormal) / sq as f64;
        coeffs.push((mi, a));
    }
    let positive = idx % 2 == 1;
    Field::from_fn(grid, |x| {
        let v: f64 = coeffs
            .iter()
            .map(|(mi, a)| {
                a * mi
                    .iter()
                    .zip(x.iter().zip(&grid.lengths))
                    .map(|(&k, (xa, l))| (k as f64 * pi * xa / l).sin())
                    .product::<f64>()
            })
            .sum();
        if positive {
            v.abs() + 1e-3 * x.iter().zip(&grid.lengths).map(|(xa, l)| (pi * xa / l).sin()).product::<f64>()
        } else {
            v
        }
    })
}

/// Multi-start estimate of the discrete Sobolev constant inf ‖∇u‖/‖u‖₄.
pub fn estimate_sobolev_c4(op: &LaplacianOp, opts: &SobolevOptions) -> Result<SobolevEstimate> {
    use rayon::prelude::*;
    let starts = opts.starts.max(1);
    let runs: Vec<Result<(f64, bool, usize)>> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let u0 = sobolev_start(&op.grid, s, &mut rng);
            descend_sobolev(op, u0, opts)
        })
        .collect();
    let mut best = (f64::INFINITY, false);
    let mut iterations = 0;
    for r in runs {
        let (f, conv, it) = r?;
        iterations += it;
        if f < best.0 {
            best = (f, conv);
        }
    }
    Ok(SobolevEstimate {
        value: best.0.sqrt(),
        converged: best.1,
        starts,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize) -> LaplacianOp {
        LaplacianOp::new(&Grid::new(&[PI], &[n]).unwrap())
    }

    fn sine(grid: &Grid, k: f64) -> Field {
        Field::from_fn(grid, |x| (k * x[0]).sin())
    }

    #[test]
    fn sine_is_discrete_eigenfield() {
        let op = line(200);
        let h = op.grid.spacings[0];
        for k in 1..=4 {
            let u = sine(&op.grid, k as f64);
            let lu = op.apply(&u).unwrap();
            let lam = 4.0 / (h * h) * (k as f64 * h / 2.0).sin().powi(2);
            for (a, b) in lu.values.iter().zip(&u.values) {
                assert!((a - lam * b).abs() < 1e-9 * lam);
            }
        }
        let z = op.apply(&Field::zeros(200)).unwrap();
        assert!(z.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn quartic_norm_of_first_mode() {
        for n in [100usize, 200] {
            let op = line(n);
            let u = Field::from_fn(&op.grid, |x| (2.0 / PI).sqrt() * x[0].sin());
            let q = norm_lp(&op.grid, &u, 4.0).unwrap().powi(4);
            // the midpoint-type rule is exact for trigonometric polynomials of low degree
            assert!((q - 3.0 / (2.0 * PI)).abs() < 1e-10);
        }
    }

    #[test]
    fn norms_and_errors() {
        let g = Grid::new(&[1.0], &[3]).unwrap();
        let u = Field {
            values: vec![1.0, -2.0, 0.5],
        };
        assert_eq!(norm_lp(&g, &u, f64::INFINITY).unwrap(), 2.0);
        assert!((norm_lp(&g, &u, 1.0).unwrap() - 3.5 * 0.25).abs() < 1e-15);
        assert!((norm_lp(&g, &u, 2.0).unwrap() - (5.25f64 * 0.25).sqrt()).abs() < 1e-15);
        assert!(norm_lp(&g, &u, 3.0).is_err());
        assert!(inner_l2(&g, &u, &Field::zeros(2)).is_err());
    }

    #[test]
    fn spectrum_1d_matches_closed_form() {
        let op = line(200);
        let b = eigenpairs(&op, 5).unwrap();
        for k in 1..=5 {
            let exact = analytic_discrete_eigenvalue(&op.grid, &[k]);
            assert!((b.lambda(k) - exact).abs() < 1e-10 * exact, "k={k}");
            assert!((b.lambda(k) - (k * k) as f64).abs() / ((k * k) as f64) < 1e-3);
        }
        for i in 0..5 {
            for j in 0..5 {
                let ip = inner_l2(&op.grid, &b.fields[i], &b.fields[j]).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-10);
            }
        }
        assert!(b.fields[0].values.iter().all(|&x| x > 0.0));
        assert!(b.gaps.iter().all(|&g| g));
        let h1 = inner_h1(&op, b.phi(1), b.phi(1)).unwrap();
        assert!((h1 - b.lambda(1)).abs() < 1e-12 * b.lambda(1));
    }

    #[test]
    fn spectrum_2d_square_handles_degeneracy() {
        let g = Grid::new(&[PI, PI], &[24, 24]).unwrap();
        let op = LaplacianOp::new(&g);
        let b = eigenpairs(&op, 6).unwrap();
        let mut exact: Vec<f64> = Vec::new();
        for i in 1..=4 {
            for j in 1..=4 {
                exact.push(analytic_discrete_eigenvalue(&g, &[i, j]));
            }
        }
        exact.sort_by(f64::total_cmp);
        for k in 0..6 {
            assert!((b.eigenvalues[k] - exact[k]).abs() < 1e-9 * exact[k], "k={k}");
        }
        assert!(b.has_gap(1));
        assert!(!b.has_gap(2));
        assert!(b.has_gap(3));
        for i in 0..6 {
            for j in 0..6 {
                let ip = inner_l2(&g, &b.fields[i], &b.fields[j]).unwrap();
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn first_eigenvalue_2d_at_64() {
        let g = Grid::new(&[PI, PI], &[64, 64]).unwrap();
        let b = eigenpairs(&LaplacianOp::new(&g), 1).unwrap();
        assert!((b.lambda(1) - 2.0).abs() / 2.0 < 1e-2);
    }

    #[test]
    fn refinement_is_second_order() {
        let e = |n: usize, k: usize| {
            let b = eigenpairs(&line(n), 5).unwrap();
            (b.lambda(k) - (k * k) as f64).abs()
        };
        for k in 1..=5 {
            assert!(e(200, k) / e(400, k) >= 3.5);
        }
    }

    #[test]
    fn solvers_agree() {
        let g = Grid::new(&[1.0, 2.0], &[9, 7]).unwrap();
        let op = LaplacianOp::new(&g);
        let b: Vec<f64> = (0..g.node_count).map(|i| (i as f64).sin()).collect();
        let q: Vec<f64> = (0..g.node_count).map(|i| (i % 5) as f64).collect();
        let direct = LinearSolverOptions {
            kind: SolverKind::Direct,
            ..Default::default()
        };
        let cg = LinearSolverOptions {
            kind: SolverKind::Cg,
            ..Default::default()
        };
        let a = op.solve_shifted(Some(&q), &b, None, &direct).unwrap();
        let c = op.solve_shifted(Some(&q), &b, None, &cg).unwrap();
        for (x, y) in a.x.iter().zip(&c.x) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(a.spd_certificate > 0.0 && c.spd_certificate > 0.0);
    }

    /// Independent oracle: Newton on the discrete Lane–Emden problem
    /// L u = u³ from many random positive starts, keeping the best ratio.
    fn newton_oracle(n: usize, starts: usize) -> f64 {
        let op = line(n);
        let h = op.grid.spacings[0];
        let w = 1.0 / (h * h);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut best = f64::INFINITY;
        for _ in 0..starts {
            let amps: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.3).collect();
            let mut u = Field::from_fn(&op.grid, |x| {
                let v: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * ((j + 1) as f64 * x[0]).sin() / (j + 1) as f64)
                    .sum();
                v.abs() + 0.05 * x[0].sin()
            });
            let lu = op.apply(&u).unwrap();
            let num = inner_l2(&op.grid, &lu, &u).unwrap();
            let den = norm_lp(&op.grid, &u, 4.0).unwrap().powi(4);
            u = u.scaled((num / den).sqrt());
            let mut ok = false;
            for _ in 0..60 {
                let lu = op.apply(&u).unwrap();
                let f: Vec<f64> = lu.values.iter().zip(&u.values).map(|(a, x)| a - x * x * x).collect();
                let fnorm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                if fnorm < 1e-11 {
                    ok = true;
                    break;
                }
                // tridiagonal Jacobian: (2w - 3u²) on the diagonal, -w off it
                let diag: Vec<f64> = u.values.iter().map(|x| 2.0 * w - 3.0 * x * x).collect();
                let mut c = vec![0.0; n];
                let mut d = vec![0.0; n];
                let mut piv = diag[0];
                c[0] = -w / piv;
                d[0] = -f[0] / piv;
                let mut bad = false;
                for i in 1..n {
                    piv = diag[i] + w * c[i - 1];
                    if piv.abs() < 1e-12 {
                        bad = true;
                        break;
                    }
                    c[i] = -w / piv;
                    d[i] = (-f[i] + w * d[i - 1]) / piv;
                }
                if bad {
                    break;
                }
                for i in (0..n - 1).rev() {
                    d[i] -= c[i] * d[i + 1];
                }
                for (x, dx) in u.values.iter_mut().zip(&d) {
                    *x += dx;
                }
            }
            if ok && u.max_abs() > 1e-6 {
                let r = sobolev_ratio_sq(&op, &u).unwrap().sqrt();
                best = best.min(r);
            }
        }
        best
    }

    #[test]
    fn sobolev_estimate_matches_newton_oracle() {
        let op = line(200);
        let est = estimate_sobolev_c4(&op, &SobolevOptions::default()).unwrap();
        let oracle = newton_oracle(200, 200);
        assert!(est.converged);
        assert!(((est.value - oracle) / oracle).abs() < 1e-4, "{} vs {}", est.value, oracle);
        let phi = Field::from_fn(&op.grid, |x| x[0].sin());
        assert!(est.value <= sobolev_ratio_sq(&op, &phi).unwrap().sqrt());
    }

    #[test]
    fn sobolev_estimate_is_deterministic() {
        let op = line(60);
        let a = estimate_sobolev_c4(&op, &SobolevOptions::default()).unwrap();
        let b = estimate_sobolev_c4(&op, &SobolevOptions::default()).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn spectrum_csv_has_header() {
        let b = eigenpairs(&line(20), 3).unwrap();
        let csv = b.to_csv().unwrap();
        assert!(csv.starts_with("k,lambda_k\n1,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
