//! Energy functional, its gradients and the Euler–Lagrange residual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{dual_norm, inner_l2, LaplacianOp};
use crate::error::{Error, Result};
use crate::model::{Field, SystemParams, VecField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub self_quartic: f64,
    pub cross_quartic: f64,
    pub total: f64,
}

pub(crate) fn check_compatible(op: &LaplacianOp, u: &VecField, params: &SystemParams) -> Result<()> {
    if u.grid != op.grid {
        return Err(Error::InvalidParams("field and operator live on different grids".into()));
    }
    if u.m() != params.m {
        return Err(Error::InvalidParams(format!(
            "field has {} components but the system has {}",
            u.m(),
            params.m
        )));
    }
    Ok(())
}

/// Mass ∫u_i² of every component.
pub fn masses(u: &VecField) -> Vec<f64> {
    let vol = u.grid.cell_volume();
    u.components
        .iter()
        .map(|c| c.values.iter().map(|x| x * x).sum::<f64>() * vol)
        .collect()
}

/// Σ_i ‖∇u_i‖².
pub fn kinetic_sum(op: &LaplacianOp, u: &VecField) -> Result<f64> {
    let mut s = 0.0;
    for c in &u.components {
        s += inner_l2(&op.grid, &op.apply(c)?, c)?;
    }
    Ok(s)
}

pub fn energy(op: &LaplacianOp, u: &VecField, params: &SystemParams) -> Result<EnergyBreakdown> {
    check_compatible(op, u, params)?;
    let vol = op.grid.cell_volume();
    let m = params.m;
    let kinetic = 0.5 * kinetic_sum(op, u)?;
    let mut self_quartic = 0.0;
    for i in 0..m {
        let q: f64 = u.components[i].values.iter().map(|x| (x * x) * (x * x)).sum();
        self_quartic += params.mu[i] * q * vol;
    }
    self_quartic *= 0.25;
    let mut cross_quartic = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let q: f64 = u.components[i]
                    .values
                    .iter()
                    .zip(&u.components[j].values)
                    .map(|(a, b)| (a * a) * (b * b))
                    .sum();
                cross_quartic += params.beta[i][j] * q * vol;
            }
        }
    }
    cross_quartic *= 0.25;
    Ok(EnergyBreakdown {
        kinetic,
        self_quartic,
        cross_quartic,
        total: kinetic - self_quartic - cross_quartic,
    })
}

/// N_i(u) = μ_i u_i³ + Σ_{k≠i} β_ki u_k² u_i, pointwise.
pub fn nonlinearity(u: &VecField, params: &SystemParams, i: usize) -> Field {
    let ui = &u.components[i].values;
    let mut out: Vec<f64> = ui.iter().map(|x| params.mu[i] * x * x * x).collect();
    for k in 0..params.m {
        if k != i {
            let b = params.beta[k][i];
            for ((o, uk), x) in out.iter_mut().zip(&u.components[k].values).zip(ui) {
                *o += b * uk * uk * x;
            }
        }
    }
    Field { values: out }
}

/// H¹ representative of dE(u): g_i = u_i − L⁻¹ N_i(u).
pub fn free_gradient(op: &LaplacianOp, u: &VecField, params: &SystemParams) -> Result<VecField> {
    check_compatible(op, u, params)?;
    let comps: Result<Vec<Field>> = (0..params.m)
        .into_par_iter()
        .map(|i| {
            let z = op.solve(&nonlinearity(u, params, i))?;
            Ok(u.components[i].axpy(-1.0, &z))
        })
        .collect();
    VecField::new(u.grid.clone(), comps?)
}

pub(crate) const MASS_REL_TOL: f64 = 1e-10;

pub(crate) fn check_on_spheres(u: &VecField, params: &SystemParams) -> Result<()> {
    for (i, (&mass, &c)) in masses(u).iter().zip(&params.masses).enumerate() {
        let rel = ((mass - c) / c).abs();
        if !(rel <= MASS_REL_TOL) {
            return Err(Error::MassConstraint { component: i, rel_err: rel });
        }
    }
    Ok(())
}

/// Tangential part of [`free_gradient`] on the product of mass spheres.
pub fn constrained_gradient(op: &LaplacianOp, u: &VecField, params: &SystemParams) -> Result<VecField> {
    check_compatible(op, u, params)?;
    check_on_spheres(u, params)?;
    let g = free_gradient(op, u, params)?;
    let comps: Result<Vec<Field>> = (0..params.m)
        .into_par_iter()
        .map(|i| {
            let ui = &u.components[i];
            let z = op.solve(ui)?;
            let theta = inner_l2(&op.grid, &g.components[i], ui)? / inner_l2(&op.grid, &z, ui)?;
            Ok(g.components[i].axpy(-theta, &z))
        })
        .collect();
    VecField::new(u.grid.clone(), comps?)
}

/// Strong-form residual −Δu_j + λ_j u_j − N_j(u) of one component.
pub fn strong_residual(
    op: &LaplacianOp,
    u: &VecField,
    lambdas: &[f64],
    params: &SystemParams,
    j: usize,
) -> Result<Field> {
    let uj = &u.components[j];
    let lu = op.apply(uj)?;
    let n = nonlinearity(u, params, j);
    Ok(Field {
        values: lu
            .values
            .iter()
            .zip(&uj.values)
            .zip(&n.values)
            .map(|((a, x), b)| a + lambdas[j] * x - b)
            .collect(),
    })
}

/// max_j of the H⁻¹ norm of the strong-form residual.
pub fn euler_lagrange_residual(
    op: &LaplacianOp,
    u: &VecField,
    lambdas: &[f64],
    params: &SystemParams,
) -> Result<f64> {
    check_compatible(op, u, params)?;
    if lambdas.len() != params.m {
        return Err(Error::InvalidParams("one multiplier per component expected".into()));
    }
    let norms: Result<Vec<f64>> = (0..params.m)
        .into_par_iter()
        .map(|j| dual_norm(op, &strong_residual(op, u, lambdas, params, j)?))
        .collect();
    Ok(norms?.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{eigenpairs, inner_h1, norm_lp};
    use crate::model::{validate_params, Grid};
    use std::f64::consts::PI;

    fn setup(mu: [f64; 2], b: f64, c: [f64; 2]) -> (LaplacianOp, SystemParams) {
        let g = Grid::new(&[PI], &[120]).unwrap();
        let p = SystemParams {
            m: 2,
            mu: mu.to_vec(),
            beta: vec![vec![0.0, b], vec![b, 0.0]],
            masses: c.to_vec(),
            dim: 1,
            lengths: vec![PI],
        };
        (LaplacianOp::new(&g), validate_params(p).unwrap().into_inner())
    }

    fn wavy(op: &LaplacianOp, a: f64, b: f64) -> Field {
        Field::from_fn(&op.grid, |x| a * x[0].sin() + b * (2.0 * x[0]).sin() + 0.1 * (5.0 * x[0]).sin())
    }

    #[test]
    fn ground_mode_energy_matches_direct_quadrature() {
        let (op, p) = setup([1.0, 2.0], 0.3, [0.2, 0.5]);
        let basis = eigenpairs(&op, 1).unwrap();
        let phi = basis.phi(1);
        let u = VecField::new(
            op.grid.clone(),
            vec![phi.scaled(0.2f64.sqrt()), phi.scaled(0.5f64.sqrt())],
        )
        .unwrap();
        let e = energy(&op, &u, &p).unwrap();
        let q = norm_lp(&op.grid, phi, 4.0).unwrap().powi(4);
        let l1 = basis.lambda(1);
        let expect = 0.5 * 0.7 * l1 - 0.25 * (1.0 * 0.04 + 2.0 * 0.25) * q - 0.5 * 0.3 * 0.1 * q;
        assert!((e.total - expect).abs() < 1e-13);
        assert_eq!(e.total, e.kinetic - e.self_quartic - e.cross_quartic);
    }

    #[test]
    fn swap_symmetry() {
        let (op, p) = setup([1.5, 1.5], -0.4, [0.1, 0.1]);
        let a = wavy(&op, 1.0, 0.3);
        let b = wavy(&op, -0.2, 0.8);
        let u = VecField::new(op.grid.clone(), vec![a.clone(), b.clone()]).unwrap();
        let v = VecField::new(op.grid.clone(), vec![b, a]).unwrap();
        assert_eq!(energy(&op, &u, &p).unwrap().total, energy(&op, &v, &p).unwrap().total);
    }

    #[test]
    fn finite_difference_gradient() {
        let (op, p) = setup([1.0, -0.7], 0.5, [0.1, 0.1]);
        let u = VecField::new(op.grid.clone(), vec![wavy(&op, 1.0, 0.5), wavy(&op, 0.3, -1.0)]).unwrap();
        let v = VecField::new(op.grid.clone(), vec![wavy(&op, -0.4, 0.2), wavy(&op, 0.9, 0.1)]).unwrap();
        let g = free_gradient(&op, &u, &p).unwrap();
        let exact: f64 = (0..2)
            .map(|i| inner_h1(&op, &g.components[i], &v.components[i]).unwrap())
            .sum();
        let t = 1e-5;
        let ep = energy(&op, &u.axpy(t, &v), &p).unwrap().total;
        let em = energy(&op, &u.axpy(-t, &v), &p).unwrap().total;
        let fd = (ep - em) / (2.0 * t);
        assert!(((fd - exact) / exact).abs() < 1e-6, "{fd} vs {exact}");
    }

    #[test]
    fn linear_case_gradient_is_identity_and_constrained_vanishes() {
        let g = Grid::new(&[PI], &[80]).unwrap();
        let op = LaplacianOp::new(&g);
        let p = SystemParams {
            m: 2,
            mu: vec![0.0, 0.0],
            beta: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            masses: vec![0.3, 0.3],
            dim: 1,
            lengths: vec![PI],
        };
        let basis = eigenpairs(&op, 3).unwrap();
        let phi = basis.phi(3).scaled(0.3f64.sqrt());
        let u = VecField::new(g.clone(), vec![phi.clone(), phi]).unwrap();
        let gr = free_gradient(&op, &u, &p).unwrap();
        assert_eq!(gr, u);
        let cg = constrained_gradient(&op, &u, &p).unwrap();
        let h1: f64 = cg.components.iter().map(|c| inner_h1(&op, c, c).unwrap()).sum();
        assert!(h1.sqrt() < 1e-12);
        let res = euler_lagrange_residual(&op, &u, &[-basis.lambda(3), -basis.lambda(3)], &p).unwrap();
        assert!(res < 1e-12);
    }

    #[test]
    fn constrained_gradient_is_tangent() {
        let (op, p) = setup([1.0, 1.0], 0.2, [0.1, 0.3]);
        let mut comps = vec![wavy(&op, 1.0, 0.5), wavy(&op, 0.3, -1.0)];
        for (c, &mass) in comps.iter_mut().zip(&p.masses) {
            let n = inner_l2(&op.grid, c, c).unwrap();
            *c = c.scaled((mass / n).sqrt());
        }
        let u = VecField::new(op.grid.clone(), comps).unwrap();
        let cg = constrained_gradient(&op, &u, &p).unwrap();
        for i in 0..2 {
            let t = inner_l2(&op.grid, &cg.components[i], &u.components[i]).unwrap();
            assert!(t.abs() < 1e-12 * p.masses[i]);
        }
        let off = VecField::new(op.grid.clone(), vec![u.components[0].scaled(2.0), u.components[1].clone()]).unwrap();
        assert!(matches!(
            constrained_gradient(&op, &off, &p),
            Err(Error::MassConstraint { component: 0, .. })
        ));
    }

    #[test]
    fn residual_grows_with_multiplier_error() {
        let g = Grid::new(&[PI], &[100]).unwrap();
        let op = LaplacianOp::new(&g);
        let basis = eigenpairs(&op, 2).unwrap();
        let p = SystemParams {
            m: 1,
            mu: vec![1e-12],
            beta: vec![vec![0.0]],
            masses: vec![0.01],
            dim: 1,
            lengths: vec![PI],
        };
        let u = VecField::new(g, vec![basis.phi(2).scaled(0.1)]).unwrap();
        let l = -basis.lambda(2);
        let r0 = euler_lagrange_residual(&op, &u, &[l], &p).unwrap();
        let r1 = euler_lagrange_residual(&op, &u, &[l + 1e-3], &p).unwrap();
        let r2 = euler_lagrange_residual(&op, &u, &[l + 1e-2], &p).unwrap();
        assert!(r0 < r1 && r1 < r2);
        // residual of ε·u in H⁻¹ is ε·√c/√Λ₂
        let want = 1e-2 * 0.1 / basis.lambda(2).sqrt();
        assert!((r2 - want).abs() < 1e-6 * want);
    }
}
