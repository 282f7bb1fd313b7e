//! The operator G: per component a linear elliptic problem with one
//! mass-constraint row, and the pseudogradient V = u − G(u).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{dual_norm, inner_h1, inner_l2, LaplacianOp, LinearSolverOptions};
use crate::energy::{check_compatible, check_on_spheres, constrained_gradient};
use crate::error::{Error, Result};
use crate::model::{Field, SystemParams, VecField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub spd_certificate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSolve {
    pub w: Field,
    pub lambda: f64,
    pub stats: SolveStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GResult {
    pub w: VecField,
    pub lambdas: Vec<f64>,
    pub solver_stats: Vec<SolveStats>,
}

/// Nonnegative potential q_i of the left operator L + diag(q_i).
pub fn left_potential(u: &VecField, params: &SystemParams, i: usize) -> Vec<f64> {
    let ui = &u.components[i].values;
    let mut q: Vec<f64> = if params.mu[i] < 0.0 {
        ui.iter().map(|x| -params.mu[i] * x * x).collect()
    } else {
        vec![0.0; ui.len()]
    };
    for j in 0..params.m {
        let b = params.beta[i][j];
        if j != i && b < 0.0 {
            for (qq, uj) in q.iter_mut().zip(&u.components[j].values) {
                *qq -= b * uj * uj;
            }
        }
    }
    q
}

/// Right-hand side f_i built from the attractive terms.
pub fn right_hand_side(u: &VecField, params: &SystemParams, i: usize) -> Vec<f64> {
    let ui = &u.components[i].values;
    let mut f: Vec<f64> = if params.mu[i] > 0.0 {
        ui.iter().map(|x| params.mu[i] * x * x * x).collect()
    } else {
        vec![0.0; ui.len()]
    };
    for j in 0..params.m {
        let b = params.beta[i][j];
        if j != i && b > 0.0 {
            for ((ff, uj), x) in f.iter_mut().zip(&u.components[j].values).zip(ui) {
                *ff += b * uj * uj * x;
            }
        }
    }
    f
}

fn merge(a: SolveStats, b: SolveStats) -> SolveStats {
    SolveStats {
        iterations: a.iterations + b.iterations,
        rel_residual: a.rel_residual.max(b.rel_residual),
        spd_certificate: a.spd_certificate.min(b.spd_certificate),
    }
}

/// Bordered solve for component `i`; `starts` optionally seeds the two
/// iterative solves (ignored by the direct path).
pub fn solve_component_g_from(
    op: &LaplacianOp,
    u: &VecField,
    i: usize,
    params: &SystemParams,
    opts: &LinearSolverOptions,
    starts: Option<(&[f64], &[f64])>,
) -> Result<ComponentSolve> {
    let q = left_potential(u, params, i);
    let f = right_hand_side(u, params, i);
    let ui = &u.components[i];
    let y = op.solve_shifted(Some(&q), &f, starts.map(|s| s.0), opts)?;
    let z = op.solve_shifted(Some(&q), &ui.values, starts.map(|s| s.1), opts)?;
    let stats = merge(
        SolveStats {
            iterations: y.iterations,
            rel_residual: y.rel_residual,
            spd_certificate: y.spd_certificate,
        },
        SolveStats {
            iterations: z.iterations,
            rel_residual: z.rel_residual,
            spd_certificate: z.spd_certificate,
        },
    );
    if !(stats.spd_certificate > 0.0) {
        return Err(Error::SolverBreakdown(format!(
            "left operator of component {i} failed the SPD check"
        )));
    }
    let y = Field { values: y.x };
    let z = Field { values: z.x };
    let uz = inner_l2(&op.grid, ui, &z)?;
    let lambda = (inner_l2(&op.grid, ui, &y)? - params.masses[i]) / uz;
    let w = y.axpy(-lambda, &z);
    Ok(ComponentSolve { w, lambda, stats })
}

pub fn solve_component_g(
    op: &LaplacianOp,
    u: &VecField,
    i: usize,
    params: &SystemParams,
    opts: &LinearSolverOptions,
) -> Result<ComponentSolve> {
    check_compatible(op, u, params)?;
    if i >= params.m {
        return Err(Error::InvalidParams(format!("component {i} out of range")));
    }
    solve_component_g_from(op, u, i, params, opts, None)
}

pub fn g_map(op: &LaplacianOp, u: &VecField, params: &SystemParams, opts: &LinearSolverOptions) -> Result<GResult> {
    check_compatible(op, u, params)?;
    let parts: Result<Vec<ComponentSolve>> = (0..params.m)
        .into_par_iter()
        .map(|i| solve_component_g_from(op, u, i, params, opts, None))
        .collect();
    let parts = parts?;
    let lambdas = parts.iter().map(|p| p.lambda).collect();
    let solver_stats = parts.iter().map(|p| p.stats).collect();
    let w = VecField::new(u.grid.clone(), parts.into_iter().map(|p| p.w).collect())?;
    Ok(GResult {
        w,
        lambdas,
        solver_stats,
    })
}

/// H⁻¹ norm of (L + q_i) w_i − f_i + λ_i u_i.
pub fn bordered_residual(
    op: &LaplacianOp,
    u: &VecField,
    params: &SystemParams,
    i: usize,
    w: &Field,
    lambda: f64,
) -> Result<f64> {
    let q = left_potential(u, params, i);
    let f = right_hand_side(u, params, i);
    let lw = op.apply(w)?;
    let r = Field {
        values: (0..w.len())
            .map(|k| lw.values[k] + q[k] * w.values[k] - f[k] + lambda * u.components[i].values[k])
            .collect(),
    };
    dual_norm(op, &r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoGradient {
    pub v: VecField,
    pub g: GResult,
    /// ‖V(u)‖ in the H¹ norm.
    pub v_norm: f64,
}

/// H¹ norm of a vector field.
pub fn norm_h1_vec(op: &LaplacianOp, v: &VecField) -> Result<f64> {
    let mut s = 0.0;
    for c in &v.components {
        s += inner_h1(op, c, c)?;
    }
    Ok(s.max(0.0).sqrt())
}

pub(crate) fn pseudogradient_unchecked(
    op: &LaplacianOp,
    u: &VecField,
    params: &SystemParams,
    opts: &LinearSolverOptions,
) -> Result<PseudoGradient> {
    let g = g_map(op, u, params, opts)?;
    let v = u.axpy(-1.0, &g.w);
    let v_norm = norm_h1_vec(op, &v)?;
    Ok(PseudoGradient { v, g, v_norm })
}

/// V(u) = u − G(u) together with the pairing ⟨∇E|_S(u), V(u)⟩_{H¹}.
pub fn pseudogradient_v(
    op: &LaplacianOp,
    u: &VecField,
    params: &SystemParams,
    opts: &LinearSolverOptions,
) -> Result<(PseudoGradient, f64)> {
    check_compatible(op, u, params)?;
    check_on_spheres(u, params)?;
    let pg = pseudogradient_unchecked(op, u, params, opts)?;
    let cg = constrained_gradient(op, u, params)?;
    let mut pairing = 0.0;
    for (a, b) in cg.components.iter().zip(&pg.v.components) {
        pairing += inner_h1(op, a, b)?;
    }
    Ok((pg, pairing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{eigenpairs, SolverKind};
    use crate::energy::masses;
    use crate::model::{validate_params, Grid};
    use std::f64::consts::PI;

    fn params(mu: Vec<f64>, beta: Vec<Vec<f64>>, c: Vec<f64>) -> SystemParams {
        let m = mu.len();
        validate_params(SystemParams {
            m,
            mu,
            beta,
            masses: c,
            dim: 1,
            lengths: vec![PI],
        })
        .unwrap()
        .into_inner()
    }

    fn on_spheres(op: &LaplacianOp, comps: Vec<Field>, c: &[f64]) -> VecField {
        let comps = comps
            .into_iter()
            .zip(c)
            .map(|(f, &ci)| {
                let n = inner_l2(&op.grid, &f, &f).unwrap();
                f.scaled((ci / n).sqrt())
            })
            .collect();
        VecField::new(op.grid.clone(), comps).unwrap()
    }

    fn mode_mix(op: &LaplacianOp, a: &[f64]) -> Field {
        Field::from_fn(&op.grid, |x| {
            a.iter()
                .enumerate()
                .map(|(j, c)| c * ((j + 1) as f64 * x[0]).sin())
                .sum()
        })
    }

    #[test]
    fn constraint_row_and_tangency() {
        let op = LaplacianOp::new(&Grid::new(&[PI], &[150]).unwrap());
        let p = params(
            vec![1.0, -0.5, 2.0],
            vec![vec![0.0, -0.3, 0.2], vec![-0.3, 0.0, 0.4], vec![0.2, 0.4, 0.0]],
            vec![0.01, 0.02, 0.005],
        );
        let u = on_spheres(
            &op,
            vec![mode_mix(&op, &[1.0, 0.4, -0.2]), mode_mix(&op, &[0.2, 1.0]), mode_mix(&op, &[0.5, -0.3, 0.9])],
            &p.masses,
        );
        let g = g_map(&op, &u, &p, &LinearSolverOptions::default()).unwrap();
        for i in 0..3 {
            let row = inner_l2(&op.grid, &u.components[i], &g.w.components[i]).unwrap();
            assert!((row - p.masses[i]).abs() < 1e-11 * p.masses[i]);
            let r = bordered_residual(&op, &u, &p, i, &g.w.components[i], g.lambdas[i]).unwrap();
            assert!(r < 1e-12, "{r}");
            assert!(g.solver_stats[i].spd_certificate > 0.0);
        }
    }

    #[test]
    fn cg_restarts_agree() {
        let op = LaplacianOp::new(&Grid::new(&[PI], &[100]).unwrap());
        let p = params(vec![1.0, -1.0], vec![vec![0.0, -0.5], vec![-0.5, 0.0]], vec![0.05, 0.05]);
        let u = on_spheres(&op, vec![mode_mix(&op, &[1.0, 0.5]), mode_mix(&op, &[0.3, 1.0])], &p.masses);
        let opts = LinearSolverOptions {
            kind: SolverKind::Cg,
            ..Default::default()
        };
        let a = solve_component_g_from(&op, &u, 1, &p, &opts, None).unwrap();
        let s0: Vec<f64> = (0..100).map(|k| (k as f64).cos()).collect();
        let b = solve_component_g_from(&op, &u, 1, &p, &opts, Some((&s0, &s0))).unwrap();
        let d = a.w.axpy(-1.0, &b.w);
        assert!(inner_h1(&op, &d, &d).unwrap().sqrt() < 1e-10);
        assert!((a.lambda - b.lambda).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_at_discrete_eigen_solution() {
        // tiny couplings: √c φ₂ is a solution with λ ≈ −Λ₂ up to O(1e-12)
        let op = LaplacianOp::new(&Grid::new(&[PI], &[80]).unwrap());
        let basis = eigenpairs(&op, 2).unwrap();
        let p = params(vec![1e-12, 1e-12], vec![vec![0.0, 1e-12], vec![1e-12, 0.0]], vec![0.1, 0.1]);
        let u = on_spheres(&op, vec![basis.phi(2).clone(), basis.phi(2).clone()], &p.masses);
        let g = g_map(&op, &u, &p, &LinearSolverOptions::default()).unwrap();
        for i in 0..2 {
            assert!((g.lambdas[i] + basis.lambda(2)).abs() < 1e-9);
            let d = g.w.components[i].axpy(-1.0, &u.components[i]);
            assert!(inner_h1(&op, &d, &d).unwrap().sqrt() < 1e-9);
        }
    }

    #[test]
    fn decoupled_limit_matches_single_component_solve() {
        let op = LaplacianOp::new(&Grid::new(&[PI], &[90]).unwrap());
        let p2 = params(vec![1.0, -2.0], vec![vec![0.0, 1e-12], vec![1e-12, 0.0]], vec![0.03, 0.04]);
        let u = on_spheres(&op, vec![mode_mix(&op, &[1.0, 0.2]), mode_mix(&op, &[0.7, -0.6])], &p2.masses);
        let g = g_map(&op, &u, &p2, &LinearSolverOptions::default()).unwrap();
        // oracle: direct dense solve of the scalar bordered system
        for i in 0..2 {
            let n = 90;
            let h = op.grid.spacings[0];
            let ui = &u.components[i].values;
            let mu = p2.mu[i];
            let mut a = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
            let mut rhs = nalgebra::DVector::<f64>::zeros(n + 1);
            for k in 0..n {
                a[(k, k)] = 2.0 / (h * h) + if mu < 0.0 { -mu * ui[k] * ui[k] } else { 0.0 };
                if k > 0 {
                    a[(k, k - 1)] = -1.0 / (h * h);
                }
                if k + 1 < n {
                    a[(k, k + 1)] = -1.0 / (h * h);
                }
                a[(k, n)] = ui[k];
                a[(n, k)] = ui[k] * h;
                rhs[k] = if mu > 0.0 { mu * ui[k].powi(3) } else { 0.0 };
            }
            rhs[n] = p2.masses[i];
            let sol = a.lu().solve(&rhs).unwrap();
            for k in 0..n {
                assert!((sol[k] - g.w.components[i].values[k]).abs() < 1e-9 * g.w.components[i].max_abs());
            }
            assert!((sol[n] - g.lambdas[i]).abs() < 1e-8 * g.lambdas[i].abs());
        }
    }

    #[test]
    fn positive_coefficients_make_v_the_constrained_gradient() {
        let op = LaplacianOp::new(&Grid::new(&[PI], &[120]).unwrap());
        let p = params(vec![1.0, 0.5], vec![vec![0.0, 0.3], vec![0.3, 0.0]], vec![0.02, 0.01]);
        let u = on_spheres(&op, vec![mode_mix(&op, &[1.0, 0.3, 0.1]), mode_mix(&op, &[0.1, 1.0])], &p.masses);
        let (pg, pairing) = pseudogradient_v(&op, &u, &p, &LinearSolverOptions::default()).unwrap();
        let cg = constrained_gradient(&op, &u, &p).unwrap();
        let d = pg.v.axpy(-1.0, &cg);
        assert!(norm_h1_vec(&op, &d).unwrap() < 1e-9);
        assert!(pairing >= pg.v_norm.powi(2) - 1e-12);
        let ms = masses(&u);
        for i in 0..2 {
            let t = inner_l2(&op.grid, &u.components[i], &pg.v.components[i]).unwrap();
            assert!(t.abs() < 1e-11 * ms[i]);
        }
    }

    #[test]
    fn positivity_is_preserved_for_small_masses() {
        let op = LaplacianOp::new(&Grid::new(&[PI], &[100]).unwrap());
        let p = params(vec![1.0, -1.0], vec![vec![0.0, -0.2], vec![-0.2, 0.0]], vec![1e-3, 1e-3]);
        let u = on_spheres(
            &op,
            vec![Field::from_fn(&op.grid, |x| x[0].sin() * (1.0 + 0.5 * x[0].cos())), mode_mix(&op, &[0.2, 1.0])],
            &p.masses,
        );
        let g = g_map(&op, &u, &p, &LinearSolverOptions::default()).unwrap();
        assert!(g.lambdas[0] <= 0.0);
        let w0 = &g.w.components[0];
        assert!(w0.min_value() >= -1e-9 * w0.max_abs());
    }
}
