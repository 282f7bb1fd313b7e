//! The acceptance suite: twelve end-to-end checks with their tolerances
//! and time budgets. Shared by the `acceptance` test target and the
//! `selftest` command.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bifurcation::{semi_trivial_sweep, sweep, SweepReport, SweepTarget};
use crate::discretization::{
    eigenpairs, inner_h1, inner_l2, LaplacianOp, LinearSolverOptions, SolverKind, SpectralBasis,
};
use crate::energy::{constrained_gradient, energy, free_gradient, kinetic_sum};
use crate::error::{Error, Result};
use crate::flow::{
    cone_bracket, project_to_spheres, run_to_critical, sphere_gap, SolveStatus, StepControl,
};
use crate::gmap::{bordered_residual, g_map, norm_h1_vec, pseudogradient_v, solve_component_g_from};
use crate::linking::{delta0_estimate, distinguished_point, estimate_minimax_bracket, feasibility_report, sample_linking_set, LinkKind, SamplerOptions};
use crate::model::{validate_params, ComponentTag, Field, SolutionTag, SystemParams, VecField};
use crate::problem::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed_s: f64,
    pub budget_s: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<34} {:>7.2}s / {:>4.0}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed_s,
            self.budget_s,
            self.detail
        )
    }
}

fn timed(id: usize, name: &str, budget_s: f64, f: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    let start = Instant::now();
    let out = f();
    let elapsed_s = start.elapsed().as_secs_f64();
    let (ok, detail) = match out {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = elapsed_s < budget_s;
    CriterionResult {
        id,
        name: name.to_string(),
        passed: ok && in_time,
        detail: if in_time {
            detail
        } else {
            format!("{detail}; over time budget")
        },
        elapsed_s,
        budget_s,
    }
}

fn benchmark_params(mu: [f64; 2], beta: f64, c: [f64; 2]) -> Result<Problem> {
    let p = validate_params(SystemParams {
        m: 2,
        mu: mu.to_vec(),
        beta: vec![vec![0.0, beta], vec![beta, 0.0]],
        masses: c.to_vec(),
        dim: 1,
        lengths: vec![PI],
    })?;
    Problem::new(p, &[200])
}

fn benchmark() -> Result<Problem> {
    benchmark_params([1.0, 1.0], 0.1, [1e-3, 1e-3])
}

/// Random smooth field: Gaussian combination of the first `modes` sine
/// modes plus a small node-wise noise.
fn random_field(op: &LaplacianOp, rng: &mut ChaCha8Rng, modes: usize, noise: f64) -> Field {
    let a: Vec<f64> = (0..modes).map(|j| rng.sample::<f64, _>(StandardNormal) / (1.0 + j as f64)).collect();
    let mut f = Field::from_fn(&op.grid, |x| {
        a.iter()
            .enumerate()
            .map(|(j, c)| c * x.iter().map(|xx| ((j + 1) as f64 * xx).sin()).product::<f64>())
            .sum()
    });
    for v in f.values.iter_mut() {
        *v += noise * rng.sample::<f64, _>(StandardNormal);
    }
    f
}

fn random_on_spheres(pr: &Problem, rng: &mut ChaCha8Rng, modes: usize, noise: f64) -> Result<VecField> {
    let comps = (0..pr.m()).map(|_| random_field(&pr.op, rng, modes, noise)).collect();
    project_to_spheres(&VecField::new(pr.grid().clone(), comps)?, &pr.params.masses)
}

pub fn spectrum_oracle() -> CriterionResult {
    timed(1, "spectrum oracle", 5.0, || {
        let errs = |n: usize| -> Result<Vec<f64>> {
            let op = LaplacianOp::new(&crate::model::Grid::new(&[PI], &[n])?);
            let b = eigenpairs(&op, 5)?;
            Ok((1..=5).map(|k| (b.lambda(k) - (k * k) as f64).abs() / (k * k) as f64).collect())
        };
        let coarse = errs(200)?;
        let fine = errs(400)?;
        let worst = coarse.iter().cloned().fold(0.0, f64::max);
        let ratio = coarse.iter().zip(&fine).map(|(a, b)| a / b).fold(f64::INFINITY, f64::min);
        Ok((worst < 1e-3 && ratio >= 3.5, format!("max rel err {worst:.2e}, min refinement ratio {ratio:.3}")))
    })
}

pub fn gradient_check() -> CriterionResult {
    timed(2, "gradient check", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pr = benchmark_params([1.0, -0.7], -0.4, [0.3, 0.2])?;
        let pr2 = benchmark_params([2.0, 0.5], 0.6, [0.3, 0.2])?;
        let mut worst: f64 = 0.0;
        for t in 0..50 {
            let p = if t % 2 == 0 { &pr } else { &pr2 };
            let u = VecField::new(
                p.grid().clone(),
                (0..2).map(|_| random_field(&p.op, &mut rng, 6, 0.0)).collect(),
            )?;
            let v = VecField::new(
                p.grid().clone(),
                (0..2).map(|_| random_field(&p.op, &mut rng, 6, 0.0)).collect(),
            )?;
            let g = free_gradient(&p.op, &u, &p.params)?;
            let mut an = 0.0;
            for (a, b) in g.components.iter().zip(&v.components) {
                an += inner_h1(&p.op, a, b)?;
            }
            // Five-point central stencil: exact for the quartic energy up
            // to rounding.
            let h = 1e-3;
            let e = |s: f64| -> Result<f64> { Ok(energy(&p.op, &u.axpy(s, &v), &p.params)?.total) };
            let fd = (8.0 * (e(h)? - e(-h)?) - (e(2.0 * h)? - e(-2.0 * h)?)) / (12.0 * h);
            worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
        }
        Ok((worst < 1e-6, format!("max rel deviation {worst:.2e} over 50 pairs")))
    })
}

fn three_component(n: usize) -> Result<Problem> {
    let p = validate_params(SystemParams {
        m: 3,
        mu: vec![1.0, -0.5, 0.8],
        beta: vec![vec![0.0, 0.3, -0.2], vec![0.3, 0.0, 0.1], vec![-0.2, 0.1, 0.0]],
        masses: vec![0.05, 0.1, 0.02],
        dim: 1,
        lengths: vec![PI],
    })?;
    Problem::new(p, &[n])
}

pub fn g_operator_contract() -> CriterionResult {
    timed(3, "G operator contract", 30.0, || {
        let pr = three_component(200)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cg = LinearSolverOptions {
            kind: SolverKind::Cg,
            ..Default::default()
        };
        let (mut row_err, mut res_err, mut resolve_err) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..100 {
            let u = random_on_spheres(&pr, &mut rng, 8, 0.0)?;
            let g = g_map(&pr.op, &u, &pr.params, &pr.solver)?;
            let un = norm_h1_vec(&pr.op, &u)?;
            for i in 0..3 {
                let w = &g.w.components[i];
                let c = pr.params.masses[i];
                row_err = row_err.max((inner_l2(pr.grid(), &u.components[i], w)? - c).abs() / c);
                let r = bordered_residual(&pr.op, &u, &pr.params, i, w, g.lambdas[i])?;
                res_err = res_err.max(r / (1.0 + un.powi(3)));
                let x0: Vec<f64> = (0..pr.op.n()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let again = solve_component_g_from(&pr.op, &u, i, &pr.params, &cg, Some((&x0, &x0)))?;
                let d = w.axpy(-1.0, &again.w);
                let scale = 1.0 + inner_h1(&pr.op, w, w)?.sqrt();
                resolve_err = resolve_err.max(inner_h1(&pr.op, &d, &d)?.sqrt() / scale);
            }
        }
        Ok((
            row_err <= 1e-11 && res_err < 1e-10 && resolve_err < 1e-10,
            format!("constraint {row_err:.1e}, residual {res_err:.1e}, re-solve {resolve_err:.1e}"),
        ))
    })
}

pub fn pseudogradient_inequality() -> CriterionResult {
    timed(4, "pseudogradient inequality", 30.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mixed = three_component(200)?;
        let repulsive = benchmark_params([-1.0, -0.5], -0.8, [0.2, 0.1])?;
        let attractive = benchmark_params([1.0, 2.0], 0.5, [0.2, 0.1])?;
        let mut worst_gap = f64::INFINITY;
        let mut worst_eq: f64 = 0.0;
        for t in 0..100 {
            let pr = if t % 2 == 0 { &mixed } else { &repulsive };
            let u = random_on_spheres(pr, &mut rng, 8, 0.0)?;
            let (pg, pairing) = pseudogradient_v(&pr.op, &u, &pr.params, &pr.solver)?;
            worst_gap = worst_gap.min(pairing - pg.v_norm * pg.v_norm);
        }
        for _ in 0..20 {
            let u = random_on_spheres(&attractive, &mut rng, 8, 0.0)?;
            let (pg, _) = pseudogradient_v(&attractive.op, &u, &attractive.params, &attractive.solver)?;
            let cgv = constrained_gradient(&attractive.op, &u, &attractive.params)?;
            worst_eq = worst_eq.max(norm_h1_vec(&attractive.op, &pg.v.axpy(-1.0, &cgv))?);
        }
        Ok((
            worst_gap >= -1e-9 && worst_eq < 1e-9,
            format!("min(<grad,V> - |V|^2) {worst_gap:.2e}, max |V - grad| {worst_eq:.1e}"),
        ))
    })
}

/// Random points of S_c ∩ B_ρ near the ground mode.
fn ball_points(pr: &Problem, basis: &SpectralBasis, rho: f64, count: usize, seed: u64) -> Result<Vec<VecField>> {
    let set = sample_linking_set(
        LinkKind::SkPerpBrho,
        1,
        None,
        basis,
        &pr.params.masses,
        count,
        seed,
        &SamplerOptions { j_trunc: basis.len() - 1, rho: None },
    )?;
    // Rotate in φ_1 so the points cover the ball rather than S_1^⊥ only.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb5);
    let mut out = Vec::new();
    for p in set.points.iter() {
        let comps = p
            .components
            .iter()
            .zip(&pr.params.masses)
            .map(|(f, c)| {
                let a: f64 = rng.random_range(0.0..1.0);
                f.scaled((a / c).sqrt()).axpy((1.0 - a).sqrt(), basis.phi(1))
            })
            .collect();
        let u = project_to_spheres(&VecField::new(p.grid.clone(), comps)?, &pr.params.masses)?;
        if kinetic_sum(&pr.op, &u)? < rho {
            out.push(u);
        }
        if out.len() == count {
            break;
        }
    }
    Ok(out)
}

pub fn barrier_bound() -> CriterionResult {
    timed(5, "energy lower bound on B_rho", 10.0, || {
        let pr = benchmark()?;
        let basis = eigenpairs(&pr.op, 9)?;
        let rep = feasibility_report(&pr, &basis, 1, None, None)?;
        let pts = ball_points(&pr, &basis, rep.rho_chosen, 1000, 5)?;
        let mut worst = f64::INFINITY;
        for u in &pts {
            let e = energy(&pr.op, u, &pr.params)?;
            worst = worst.min(e.total - rep.m0 * 2.0 * e.kinetic);
        }
        Ok((
            rep.feasible && pts.len() == 1000 && worst >= -1e-10,
            format!("{} points, min(E - M0*K) {worst:.3e}, M0 {:.4}", pts.len(), rep.m0),
        ))
    })
}

pub fn minimax_sandwich() -> CriterionResult {
    timed(6, "minimax sandwich", 60.0, || {
        let pr = benchmark()?;
        let basis = eigenpairs(&pr.op, 10)?;
        let b = estimate_minimax_bracket(&pr, &basis, 1, None, 10_000, 6, 8, None)?;
        let lin = benchmark_params([1e-10, -1e-10], 1e-10, [1e-3, 1e-3])?;
        lin.set_sobolev(pr.sobolev()?);
        let bl = estimate_minimax_bracket(&lin, &basis, 1, None, 10_000, 6, 8, None)?;
        let target = 0.5 * 2e-3 * basis.lambda(2);
        let dev = (bl.lower - target).abs().max((bl.upper - target).abs());
        Ok((
            b.feasible && b.holds && dev < 1e-6,
            format!(
                "margins {:.2e}/{:.2e}, width {:.2e}, linear-limit deviation {dev:.1e}",
                b.margin_left, b.margin_right, b.width
            ),
        ))
    })
}

pub fn flow_contracts() -> CriterionResult {
    timed(7, "flow contracts", 60.0, || {
        let pr = benchmark()?;
        let basis = eigenpairs(&pr.op, 10)?;
        let rep = feasibility_report(&pr, &basis, 1, None, None)?;
        let d0 = delta0_estimate(&pr, &basis, 1, None, rep.rho_chosen, 2000, 7, 8)?;
        let set = sample_linking_set(LinkKind::Mk1, 1, None, &basis, &pr.params.masses, 4, 7, &SamplerOptions::default())?;
        let ctl = StepControl {
            v_tol: 0.0,
            max_steps: 500,
            polish_below: None,
            delta: Some(0.1 * d0),
            rho: Some(rep.rho_chosen),
            m1: Some(rep.m1),
            ..Default::default()
        };
        let run = run_to_critical(&set.points[3], &ctl, &pr)?;
        let drift = run.log.iter().map(|r| r.mass_err_max).fold(0.0, f64::max);
        let rise = run
            .log
            .windows(2)
            .map(|w| w[1].energy - w[0].energy)
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = run.steps == 500 && drift <= 1e-10 && rise <= 1e-12 && run.violations.is_empty();
        Ok((
            ok,
            format!(
                "{} steps, mass drift {drift:.1e}, max energy rise {rise:.1e}, {} violations",
                run.steps,
                run.violations.len()
            ),
        ))
    })
}

pub fn sign_changing_solution() -> CriterionResult {
    timed(8, "sign-changing solution", 120.0, || {
        let pr = benchmark()?;
        let basis = eigenpairs(&pr.op, 4)?;
        let init = distinguished_point(&basis, &pr.params.masses, 1, None)?;
        let ctl = StepControl {
            v_tol: 1e-9,
            max_steps: 5000,
            ..Default::default()
        };
        let run = run_to_critical(&init, &ctl, &pr)?;
        let tags = &run.classification.per_component;
        let ok = run.status == SolveStatus::Converged
            && run.v_norm < 1e-8
            && run.el_residual < 1e-6
            && tags.iter().all(|&t| t == ComponentTag::SignChanging);
        Ok((
            ok,
            format!("{:?}, |V| {:.1e}, residual {:.1e}, {:?}", run.status, run.v_norm, run.el_residual, run.classification.tag),
        ))
    })
}

pub fn semi_nodal_solution() -> CriterionResult {
    timed(9, "semi-nodal solution", 120.0, || {
        let pr = benchmark()?;
        let basis = eigenpairs(&pr.op, 4)?;
        let init = distinguished_point(&basis, &pr.params.masses, 1, Some(1))?;
        let ctl = StepControl {
            v_tol: 1e-9,
            max_steps: 5000,
            positive_components: vec![1],
            ..Default::default()
        };
        let run = run_to_critical(&init, &ctl, &pr)?;
        let tags = &run.classification.per_component;
        let min2 = run.u.components[1].min_value();
        let ok = run.status == SolveStatus::Converged
            && tags[0] == ComponentTag::SignChanging
            && run.classification.tag == SolutionTag::SemiNodal(1)
            && min2 > 0.0
            && run.violations.is_empty();
        Ok((
            ok,
            format!(
                "{:?}, {:?}, min of component 2 {min2:.2e}, {} violations",
                run.status,
                run.classification.tag,
                run.violations.len()
            ),
        ))
    })
}

fn sweep_ok(rep: &SweepReport) -> (bool, f64, f64) {
    let err = rep.trend.final_rel_errors.iter().flatten().cloned().fold(0.0, f64::max);
    let dist = rep.trend.final_target_dist.iter().flatten().cloned().fold(0.0, f64::max);
    let ok = rep.trend.all_converged && rep.trend.error_decreasing.iter().all(|&b| b) && err < 5e-2 && dist < 1e-2;
    (ok, err, dist)
}

pub fn bifurcation_limits() -> CriterionResult {
    timed(10, "small-mass limits", 600.0, || {
        let pr = benchmark()?;
        let basis = eigenpairs(&pr.op, 6)?;
        let radii = [1e-2, 1e-3, 1e-4];
        let ctl = StepControl::default();
        let mut details = Vec::new();
        let mut all = true;
        for (name, target) in [
            ("positive", SweepTarget::Positive),
            ("sign-changing", SweepTarget::SignChanging { k: 2 }),
            ("semi-nodal", SweepTarget::SemiNodal { k: 2, d: 1 }),
        ] {
            let rep = sweep(&pr, &basis, &[0.5, 0.5], &radii, target, &ctl)?;
            let (ok, err, dist) = sweep_ok(&rep);
            all &= ok;
            details.push(format!("{name} err {err:.1e} dist {dist:.1e}"));
        }
        let st = semi_trivial_sweep(&pr, &basis, &[0], &[1.0], &radii, SweepTarget::SignChanging { k: 2 }, &ctl)?;
        let (ok, _, _) = sweep_ok(&st);
        let exact = st.records.iter().all(|r| r.embedded_residual == Some(r.el_residual));
        all &= ok && exact;
        details.push(format!("semi-trivial residual match {exact}"));
        Ok((all, details.join("; ")))
    })
}

pub fn projection_rate() -> CriterionResult {
    timed(11, "projection rate", 10.0, || {
        let pr = benchmark_params([1.0, 1.0], 0.1, [0.1, 0.1])?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ls = [1e-3f64, 1e-4, 1e-5].map(|s| s.log10());
        let mut worst: f64 = 0.0;
        let mut slopes = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..20 {
            let u = random_on_spheres(&pr, &mut rng, 6, 0.0)?;
            let (pg, _) = pseudogradient_v(&pr.op, &u, &pr.params, &pr.solver)?;
            let mut ys = [0.0; 3];
            for (y, &s) in ys.iter_mut().zip(&[1e-3, 1e-4, 1e-5]) {
                *y = sphere_gap(&pr.op, &u.axpy(s, &pg.v), &pr.params.masses)?.log10();
            }
            let xm = ls.iter().sum::<f64>() / 3.0;
            let ym = ys.iter().sum::<f64>() / 3.0;
            let num: f64 = ls.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
            let den: f64 = ls.iter().map(|x| (x - xm).powi(2)).sum();
            let slope = num / den;
            worst = worst.max((slope - 2.0).abs());
            slopes = (slopes.0.min(slope), slopes.1.max(slope));
        }
        Ok((worst <= 0.1, format!("slopes in [{:.4}, {:.4}]", slopes.0, slopes.1)))
    })
}

pub fn cone_mapping() -> CriterionResult {
    timed(12, "cone mapping", 60.0, || {
        let pr = benchmark()?;
        let basis = eigenpairs(&pr.op, 10)?;
        let rep = feasibility_report(&pr, &basis, 1, None, None)?;
        if !rep.cone_mass_cond.iter().all(|c| c.holds) {
            return Err(Error::InvalidParams("cone mass condition fails for the benchmark".into()));
        }
        let delta = 0.1 * delta0_estimate(&pr, &basis, 1, None, rep.rho_chosen, 2000, 12, 8)?;
        let c = pr.sobolev()?.value;
        let pts = ball_points(&pr, &basis, rep.rho_chosen, 200, 12)?;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut worst_sign = f64::INFINITY;
        let mut worst_tube = f64::NEG_INFINITY;
        let mut used = 0;
        for u in pts.iter().take(50) {
            for sign in [1.0, -1.0] {
                // Component 0 in ±P_0.
                let mut comps = u.components.clone();
                comps[0] = Field {
                    values: comps[0].values.iter().map(|x| sign * x.abs()).collect(),
                };
                let inside = VecField::new(u.grid.clone(), comps.clone())?;
                let g = g_map(&pr.op, &inside, &pr.params, &pr.solver)?;
                let w = g.w.components[0].scaled(sign);
                worst_sign = worst_sign.min(w.min_value() / w.max_abs());
                // A localized bump of the wrong sign, scaled into the δ-tube.
                let centre = rng.random_range(10..190usize);
                let mut bump = Field::zeros(pr.op.n());
                for (k, v) in bump.values.iter_mut().enumerate() {
                    let d = k as f64 - centre as f64;
                    *v = (-d * d / 8.0).exp();
                }
                let scale = inner_h1(&pr.op, &bump, &bump)?.sqrt();
                let mut tube = comps.clone();
                tube[0] = tube[0].axpy(-sign * 0.5 * delta / scale, &bump);
                let tu = project_to_spheres(&VecField::new(u.grid.clone(), tube)?, &pr.params.masses)?;
                let b = cone_bracket(&pr.op, &tu.components[0].scaled(sign), c)?;
                if b.to_positive.upper > delta || kinetic_sum(&pr.op, &tu)? >= rep.rho_chosen {
                    continue;
                }
                used += 1;
                let gt = g_map(&pr.op, &tu, &pr.params, &pr.solver)?;
                let bw = cone_bracket(&pr.op, &gt.w.components[0].scaled(sign), c)?;
                worst_tube = worst_tube.max(bw.to_positive.upper - 0.5 * delta);
            }
        }
        Ok((
            worst_sign >= -1e-9 && worst_tube <= 1e-9 && used >= 50,
            format!("min node ratio {worst_sign:.2e}, tube excess {worst_tube:.2e} on {used} tube points, delta {delta:.2e}"),
        ))
    })
}

pub fn run_all(mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let checks: [fn() -> CriterionResult; 12] = [
        spectrum_oracle,
        gradient_check,
        g_operator_contract,
        pseudogradient_inequality,
        barrier_bound,
        minimax_sandwich,
        flow_contracts,
        sign_changing_solution,
        semi_nodal_solution,
        bifurcation_limits,
        projection_rate,
        cone_mapping,
    ];
    checks
        .iter()
        .map(|f| {
            let r = f();
            report(&r);
            r
        })
        .collect()
}
