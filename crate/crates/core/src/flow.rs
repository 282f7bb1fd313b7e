//! The descending flow u' = −h(u)·V(u) on the product of mass spheres:
//! explicit steps with re-projection, invariant-set monitors, a final
//! Newton polish near saddle points, and sign classification.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{inner_h1, norm_lp, LaplacianOp};
use crate::energy::{energy, euler_lagrange_residual, masses, nonlinearity, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::gmap::{norm_h1_vec, pseudogradient_unchecked};
use crate::model::{Classification, ComponentTag, Field, SolutionTag, SystemParams, VecField};
use crate::problem::Problem;

/// Relative mass error below which a component is left untouched.
const SPHERE_SNAP: f64 = 1e-12;

/// Scale every component onto its mass sphere ∫u_i² = c_i.
pub fn project_to_spheres(u: &VecField, target: &[f64]) -> Result<VecField> {
    if target.len() != u.m() {
        return Err(Error::InvalidParams("one mass per component expected".into()));
    }
    let current = masses(u);
    let mut comps = Vec::with_capacity(u.m());
    for (i, (c, (&mass, &want))) in u.components.iter().zip(current.iter().zip(target)).enumerate() {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::ZeroComponent(i));
        }
        if ((mass - want) / want).abs() <= SPHERE_SNAP {
            comps.push(c.clone());
        } else {
            comps.push(c.scaled((want / mass).sqrt()));
        }
    }
    VecField::new(u.grid.clone(), comps)
}

/// H¹ distance from `w` to its radial projection onto the spheres.
pub fn sphere_gap(op: &LaplacianOp, w: &VecField, target: &[f64]) -> Result<f64> {
    let p = project_to_spheres(w, target)?;
    norm_h1_vec(op, &w.axpy(-1.0, &p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffBand {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

/// Energy-band cutoff: 0 when E ≥ b+2ε or E ≤ a−2ε, 1 on [a−ε, b+ε],
/// linear in between.
pub fn cutoff_h(energy: f64, a: f64, b: f64, eps: f64) -> f64 {
    let v = if energy >= b + 2.0 * eps || energy <= a - 2.0 * eps {
        0.0
    } else if energy > b + eps {
        (b + 2.0 * eps - energy) / eps
    } else if energy < a - eps {
        (energy - (a - 2.0 * eps)) / eps
    } else {
        1.0
    };
    v.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub armijo_factor: f64,
    pub growth: f64,
    pub v_tol: f64,
    pub max_steps: usize,
    pub delta: Option<f64>,
    pub rho: Option<f64>,
    pub m1: Option<f64>,
    pub cutoff: Option<CutoffBand>,
    /// Try a Newton polish once ‖V‖ ≤ polish_below·(1 + ‖u‖).
    pub polish_below: Option<f64>,
    /// Components expected to stay nonnegative (semi-nodal runs).
    pub positive_components: Vec<usize>,
    pub theta: f64,
    /// Component permutation used when classifying semi-nodal patterns.
    pub order: Option<Vec<usize>>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_init: 0.5,
            dt_min: 1e-12,
            dt_max: 1.0,
            armijo_factor: 1e-4,
            growth: 1.5,
            v_tol: 1e-9,
            max_steps: 2000,
            delta: None,
            rho: None,
            m1: None,
            cutoff: None,
            polish_below: Some(1e-4),
            positive_components: Vec::new(),
            theta: 1e-3,
            order: None,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt_init
            && self.dt_init <= self.dt_max
            && self.armijo_factor > 0.0
            && self.armijo_factor < 1.0
            && self.growth >= 1.0
            && self.v_tol >= 0.0
            && self.theta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams("inconsistent step control".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
}

/// Brackets of dist(u, P_i) (from u_i⁻) and dist(u, −P_i) (from u_i⁺).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeBracket {
    pub to_positive: Bracket,
    pub to_negative: Bracket,
}

pub fn cone_bracket(op: &LaplacianOp, f: &Field, sobolev_c: f64) -> Result<ConeBracket> {
    let b = |part: Field| -> Result<Bracket> {
        Ok(Bracket {
            lower: sobolev_c * norm_lp(&op.grid, &part, 4.0)?,
            upper: inner_h1(op, &part, &part)?.max(0.0).sqrt(),
        })
    };
    Ok(ConeBracket {
        to_positive: b(f.negative_part())?,
        to_negative: b(f.positive_part())?,
    })
}

pub fn cone_brackets(op: &LaplacianOp, u: &VecField, sobolev_c: f64) -> Result<Vec<ConeBracket>> {
    u.components.iter().map(|f| cone_bracket(op, f, sobolev_c)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TubeStatus {
    Inside,
    Outside,
    Undetermined,
}

pub fn tube_status(b: &Bracket, delta: f64) -> TubeStatus {
    if b.upper <= delta {
        TubeStatus::Inside
    } else if b.lower > delta {
        TubeStatus::Outside
    } else {
        TubeStatus::Undetermined
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowState {
    pub u: VecField,
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
    /// Σ‖∇u_i‖².
    pub kinetic: f64,
    pub v_norm: f64,
    pub lambdas: Vec<f64>,
    pub el_residual: f64,
    pub cone_brackets: Vec<ConeBracket>,
    pub step_count: usize,
    pub converged: bool,
    #[serde(skip)]
    v: Option<VecField>,
}

impl FlowState {
    /// Evaluate all diagnostics at `u`, which must already lie on the spheres.
    pub fn at(problem: &Problem, u: VecField, t: f64, dt: f64, step: usize, v_tol: f64) -> Result<FlowState> {
        let params: &SystemParams = &problem.params;
        let op = &problem.op;
        let e = energy(op, &u, params)?;
        let pg = pseudogradient_unchecked(op, &u, params, &problem.solver)?;
        let el = euler_lagrange_residual(op, &u, &pg.g.lambdas, params)?;
        let c = problem.sobolev()?.value;
        let cone_brackets = cone_brackets(op, &u, c)?;
        Ok(FlowState {
            converged: pg.v_norm < v_tol && el < 10.0 * v_tol,
            u,
            t,
            dt,
            energy: e.total,
            kinetic: 2.0 * e.kinetic,
            v_norm: pg.v_norm,
            lambdas: pg.g.lambdas,
            el_residual: el,
            cone_brackets,
            step_count: step,
            v: Some(pg.v),
        })
    }

    pub fn v(&self) -> Option<&VecField> {
        self.v.as_ref()
    }

    fn min_cone_lower(&self) -> f64 {
        self.cone_brackets
            .iter()
            .flat_map(|b| [b.to_positive.lower, b.to_negative.lower])
            .fold(f64::INFINITY, f64::min)
    }
}

/// One explicit Euler step with halving backtracking and re-projection.
pub fn flow_step(state: &FlowState, ctl: &StepControl, problem: &Problem) -> Result<FlowState> {
    if state.converged {
        return Ok(state.clone());
    }
    let v = match &state.v {
        Some(v) => v.clone(),
        None => pseudogradient_unchecked(&problem.op, &state.u, &problem.params, &problem.solver)?.v,
    };
    let h = ctl
        .cutoff
        .map_or(1.0, |band| cutoff_h(state.energy, band.a, band.b, band.eps));
    if h == 0.0 {
        let mut s = state.clone();
        s.step_count += 1;
        return Ok(s);
    }
    let vv = state.v_norm * state.v_norm;
    let slack = 64.0 * f64::EPSILON * (1.0 + state.energy.abs());
    let mut dt = state.dt.clamp(ctl.dt_min, ctl.dt_max);
    loop {
        let cand = project_to_spheres(&state.u.axpy(-dt * h, &v), &problem.params.masses)?;
        let e_new = energy(&problem.op, &cand, &problem.params)?.total;
        if e_new - state.energy <= -ctl.armijo_factor * dt * h * vv + slack {
            let next_dt = (dt * ctl.growth).min(ctl.dt_max);
            return FlowState::at(problem, cand, state.t + dt * h, next_dt, state.step_count + 1, ctl.v_tol);
        }
        dt *= 0.5;
        if dt < ctl.dt_min {
            return Err(Error::Stagnation {
                step: state.step_count,
                dt,
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub step: usize,
    pub in_b_rho: Option<bool>,
    pub below_m1: Option<bool>,
    /// Per component: tube status for P_i and for −P_i.
    pub tubes: Vec<[TubeStatus; 2]>,
    pub min_node: Vec<f64>,
}

pub fn check_invariant_sets(state: &FlowState, ctl: &StepControl) -> InvariantReport {
    let tubes = match ctl.delta {
        Some(d) => state
            .cone_brackets
            .iter()
            .map(|b| [tube_status(&b.to_positive, d), tube_status(&b.to_negative, d)])
            .collect(),
        None => vec![[TubeStatus::Undetermined; 2]; state.cone_brackets.len()],
    };
    InvariantReport {
        step: state.step_count,
        in_b_rho: ctl.rho.map(|r| state.kinetic < r),
        below_m1: ctl.m1.map(|m1| state.energy < m1),
        tubes,
        min_node: state.u.components.iter().map(|c| c.min_value()).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub kind: String,
}

fn violations_between(prev: &InvariantReport, cur: &InvariantReport, ctl: &StepControl) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind: String| out.push(Violation { step: cur.step, kind });
    if prev.in_b_rho == Some(true) && cur.in_b_rho == Some(false) {
        push("left B_rho".into());
    }
    if prev.below_m1 == Some(true) && cur.below_m1 == Some(false) {
        push("energy reached M1".into());
    }
    for (i, (p, c)) in prev.tubes.iter().zip(&cur.tubes).enumerate() {
        for (s, name) in [(0usize, "+"), (1, "-")] {
            if p[s] == TubeStatus::Inside && c[s] == TubeStatus::Outside {
                push(format!("component {} left the delta-tube of {}P", i + 1, name));
            }
        }
    }
    for &i in &ctl.positive_components {
        if cur.min_node.get(i).is_some_and(|&x| x < 0.0) {
            push(format!("component {} lost positivity", i + 1));
        }
    }
    out
}

fn initial_violations(r: &InvariantReport, ctl: &StepControl) -> Vec<Violation> {
    let mut out = Vec::new();
    if r.in_b_rho == Some(false) || r.below_m1 == Some(false) {
        out.push(Violation {
            step: 0,
            kind: "outside B_rho^M1".into(),
        });
    }
    for &i in &ctl.positive_components {
        if r.min_node.get(i).is_some_and(|&x| x < 0.0) {
            out.push(Violation {
                step: 0,
                kind: format!("component {} starts with negative nodes", i + 1),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
    pub v_norm: f64,
    pub lambdas: Vec<f64>,
    pub mass_err_max: f64,
    pub cone_lb_min: f64,
    pub in_b_rho: Option<bool>,
    pub below_m1: Option<bool>,
}

fn log_row(state: &FlowState, params: &SystemParams, inv: &InvariantReport) -> LogRow {
    let mass_err_max = masses(&state.u)
        .iter()
        .zip(&params.masses)
        .map(|(m, c)| ((m - c) / c).abs())
        .fold(0.0, f64::max);
    LogRow {
        step: state.step_count,
        t: state.t,
        dt: state.dt,
        energy: state.energy,
        v_norm: state.v_norm,
        lambdas: state.lambdas.clone(),
        mass_err_max,
        cone_lb_min: state.min_cone_lower(),
        in_b_rho: inv.in_b_rho,
        below_m1: inv.below_m1,
    }
}

pub fn run_log_csv(rows: &[LogRow], m: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["step", "t", "dt", "energy", "v_norm"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=m).map(|i| format!("lambda_{i}")));
    header.extend(["mass_err_max", "cone_lb_min", "in_B_rho", "below_M1"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    let flag = |b: Option<bool>| b.map_or(String::new(), |b| b.to_string());
    for r in rows {
        let mut rec = vec![
            r.step.to_string(),
            format!("{:.17e}", r.t),
            format!("{:.17e}", r.dt),
            format!("{:.17e}", r.energy),
            format!("{:.17e}", r.v_norm),
        ];
        rec.extend(r.lambdas.iter().map(|l| format!("{l:.17e}")));
        rec.push(format!("{:.17e}", r.mass_err_max));
        rec.push(format!("{:.17e}", r.cone_lb_min));
        rec.push(flag(r.in_b_rho));
        rec.push(flag(r.below_m1));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxSteps,
    Stagnated,
    ComponentVanished,
    SolverFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolishRecord {
    pub after_step: usize,
    pub iterations: usize,
    pub v_norm_before: f64,
    pub v_norm_after: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub message: Option<String>,
    pub u: VecField,
    pub lambdas: Vec<f64>,
    pub energy: EnergyBreakdown,
    pub v_norm: f64,
    pub el_residual: f64,
    pub classification: Classification,
    pub steps: usize,
    pub t: f64,
    pub log: Vec<LogRow>,
    pub violations: Vec<Violation>,
    pub polish: Vec<PolishRecord>,
    pub outside_theorem_scope: bool,
}

/// Largest bordered Newton system (unknowns) the polish will assemble.
const POLISH_MAX_UNKNOWNS: usize = 3000;

/// Newton iterations on the full bordered system
/// L u_i + λ_i u_i − N_i(u) = 0, ∫u_i² = c_i.
fn newton_polish(problem: &Problem, state: &FlowState, ctl: &StepControl) -> Result<Option<(FlowState, usize)>> {
    let params = &problem.params;
    let op = &problem.op;
    let n = op.n();
    let m = params.m;
    let size = m * n + m;
    if size > POLISH_MAX_UNKNOWNS {
        return Ok(None);
    }
    let vol = op.grid.cell_volume();
    let mut u = state.u.clone();
    let mut lam = state.lambdas.clone();
    let mut best: Option<FlowState> = None;
    for it in 1..=8 {
        let mut jac = DMatrix::<f64>::zeros(size, size);
        let mut rhs = DVector::<f64>::zeros(size);
        let d = op.diagonal();
        let strides = op.grid.strides();
        for i in 0..m {
            let ui = &u.components[i].values;
            let lu = op.apply(&u.components[i])?;
            let ni = nonlinearity(&u, params, i);
            let base = i * n;
            for k in 0..n {
                rhs[base + k] = -(lu.values[k] + lam[i] * ui[k] - ni.values[k]);
                let mut dn = 3.0 * params.mu[i] * ui[k] * ui[k];
                for j in 0..m {
                    if j != i {
                        let uj = u.components[j].values[k];
                        dn += params.beta[j][i] * uj * uj;
                        jac[(base + k, j * n + k)] = -2.0 * params.beta[j][i] * uj * ui[k];
                    }
                }
                jac[(base + k, base + k)] = d + lam[i] - dn;
                for a in 0..op.grid.dim {
                    let s = strides[a];
                    let ia = (k / s) % op.grid.sizes[a];
                    if ia > 0 {
                        jac[(base + k, base + k - s)] = -op.stencil[a];
                    }
                    if ia + 1 < op.grid.sizes[a] {
                        jac[(base + k, base + k + s)] = -op.stencil[a];
                    }
                }
                jac[(base + k, m * n + i)] = ui[k];
                jac[(m * n + i, base + k)] = ui[k] * vol;
            }
            let mass: f64 = ui.iter().map(|x| x * x).sum::<f64>() * vol;
            rhs[m * n + i] = -0.5 * (mass - params.masses[i]);
        }
        let Some(delta) = jac.lu().solve(&rhs) else {
            return Ok(None);
        };
        let mut comps = u.components.clone();
        for (i, c) in comps.iter_mut().enumerate() {
            for k in 0..n {
                c.values[k] += delta[i * n + k];
            }
            lam[i] += delta[m * n + i];
        }
        u = match project_to_spheres(&VecField::new(u.grid.clone(), comps)?, &params.masses) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
        let s = FlowState::at(problem, u.clone(), state.t, state.dt, state.step_count, ctl.v_tol)?;
        let better = best.as_ref().is_none_or(|b| s.v_norm < b.v_norm);
        let done = s.converged;
        if better {
            best = Some(s);
        }
        if done {
            return Ok(best.map(|b| (b, it)));
        }
    }
    Ok(best.filter(|b| b.converged).map(|b| (b, 8)))
}

fn classify_tag(f: &Field, theta: f64) -> ComponentTag {
    let amp = f.max_abs();
    if amp < ZERO_FLOOR {
        return ComponentTag::Zero;
    }
    let lo = f.min_value() < -theta * amp;
    let hi = f.max_value() > theta * amp;
    match (lo, hi) {
        (true, true) => ComponentTag::SignChanging,
        (true, false) => ComponentTag::Negative,
        _ => ComponentTag::Positive,
    }
}

/// Absolute sup-norm floor below which a component counts as zero.
pub const ZERO_FLOOR: f64 = 1e-14;

pub fn classify(u: &VecField, theta: f64) -> Classification {
    classify_with_order(u, theta, None)
}

/// Classification where `order` lists components so that sign-changing
/// ones are expected first for a semi-nodal pattern.
pub fn classify_with_order(u: &VecField, theta: f64, order: Option<&[usize]>) -> Classification {
    let per_component: Vec<ComponentTag> = u.components.iter().map(|f| classify_tag(f, theta)).collect();
    let m = per_component.len();
    let zeros = per_component.iter().filter(|&&t| t == ComponentTag::Zero).count();
    let changing = per_component
        .iter()
        .filter(|&&t| t == ComponentTag::SignChanging)
        .count();
    let tag = if zeros == m {
        SolutionTag::Trivial
    } else if zeros > 0 {
        SolutionTag::SemiTrivial
    } else if changing == m {
        SolutionTag::SignChanging
    } else if changing == 0 {
        SolutionTag::Positive
    } else {
        let identity: Vec<usize> = (0..m).collect();
        let ord = order.filter(|o| o.len() == m).unwrap_or(&identity);
        let prefix_ok = ord
            .iter()
            .enumerate()
            .all(|(pos, &i)| (per_component[i] == ComponentTag::SignChanging) == (pos < changing));
        if prefix_ok {
            SolutionTag::SemiNodal(changing)
        } else {
            SolutionTag::Mixed
        }
    };
    Classification { tag, per_component }
}

fn report_from(
    problem: &Problem,
    state: &FlowState,
    status: SolveStatus,
    message: Option<String>,
    log: Vec<LogRow>,
    violations: Vec<Violation>,
    polish: Vec<PolishRecord>,
    ctl: &StepControl,
) -> Result<SolveReport> {
    Ok(SolveReport {
        status,
        message,
        u: state.u.clone(),
        lambdas: state.lambdas.clone(),
        energy: energy(&problem.op, &state.u, &problem.params)?,
        v_norm: state.v_norm,
        el_residual: state.el_residual,
        classification: classify_with_order(&state.u, ctl.theta, ctl.order.as_deref()),
        steps: state.step_count,
        t: state.t,
        log,
        violations,
        polish,
        outside_theorem_scope: problem.params.dim < 3,
    })
}

/// Flow `init` (after projection) until ‖V‖ and the residual are below
/// tolerance, the step budget runs out, or the flow breaks down.
pub fn run_to_critical(init: &VecField, ctl: &StepControl, problem: &Problem) -> Result<SolveReport> {
    ctl.validate()?;
    let u0 = project_to_spheres(init, &problem.params.masses)?;
    let mut state = FlowState::at(problem, u0, 0.0, ctl.dt_init, 0, ctl.v_tol)?;
    let mut inv = check_invariant_sets(&state, ctl);
    let mut violations = initial_violations(&inv, ctl);
    let mut log = vec![log_row(&state, &problem.params, &inv)];
    let mut polish = Vec::new();
    let mut last_polish_at = f64::INFINITY;
    let mut status = SolveStatus::MaxSteps;
    let mut message = None;
    while !state.converged {
        if let Some(pb) = ctl.polish_below {
            let scale = 1.0 + norm_h1_vec(&problem.op, &state.u)?;
            if state.v_norm <= pb * scale && state.v_norm < 0.5 * last_polish_at {
                last_polish_at = state.v_norm;
                let before = state.v_norm;
                match newton_polish(problem, &state, ctl)? {
                    Some((s, its)) => {
                        let cur = check_invariant_sets(&s, ctl);
                        let vs = violations_between(&inv, &cur, ctl);
                        let accepted = vs.is_empty();
                        polish.push(PolishRecord {
                            after_step: state.step_count,
                            iterations: its,
                            v_norm_before: before,
                            v_norm_after: s.v_norm,
                            accepted,
                        });
                        if accepted {
                            state = s;
                            break;
                        }
                    }
                    None => polish.push(PolishRecord {
                        after_step: state.step_count,
                        iterations: 0,
                        v_norm_before: before,
                        v_norm_after: f64::NAN,
                        accepted: false,
                    }),
                }
            }
        }
        if state.step_count >= ctl.max_steps {
            break;
        }
        match flow_step(&state, ctl, problem) {
            Ok(s) => state = s,
            Err(Error::Stagnation { step, dt }) => {
                status = SolveStatus::Stagnated;
                message = Some(format!("no descent at step {step} down to dt = {dt:e}"));
                break;
            }
            Err(Error::ZeroComponent(i)) => {
                status = SolveStatus::ComponentVanished;
                message = Some(format!("component {} vanished", i + 1));
                break;
            }
            Err(Error::SolverBreakdown(msg)) => {
                status = SolveStatus::SolverFailure;
                message = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        let cur = check_invariant_sets(&state, ctl);
        violations.extend(violations_between(&inv, &cur, ctl));
        inv = cur;
        log.push(log_row(&state, &problem.params, &inv));
    }
    if state.converged {
        status = SolveStatus::Converged;
    }
    report_from(problem, &state, status, message, log, violations, polish, ctl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{eigenpairs, inner_l2};
    use crate::model::{validate_params, Grid};
    use std::f64::consts::PI;

    fn problem(mu: [f64; 2], b: f64, c: [f64; 2], n: usize) -> Problem {
        let p = validate_params(SystemParams {
            m: 2,
            mu: mu.to_vec(),
            beta: vec![vec![0.0, b], vec![b, 0.0]],
            masses: c.to_vec(),
            dim: 1,
            lengths: vec![PI],
        })
        .unwrap();
        Problem::new(p, &[n]).unwrap()
    }

    #[test]
    fn projection_scales_and_is_idempotent() {
        let g = Grid::new(&[PI], &[50]).unwrap();
        let f = Field::from_fn(&g, |x| x[0].sin() + 0.3 * (3.0 * x[0]).sin());
        let n = inner_l2(&g, &f, &f).unwrap();
        let u = VecField::new(g.clone(), vec![f.scaled((4.0 * 0.2 / n).sqrt())]).unwrap();
        let p = project_to_spheres(&u, &[0.2]).unwrap();
        assert!((masses(&p)[0] - 0.2).abs() < 1e-15);
        let q = project_to_spheres(&p, &[0.2]).unwrap();
        for (a, b) in p.components[0].values.iter().zip(&q.components[0].values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let z = VecField::zeros(&g, 1);
        assert!(matches!(project_to_spheres(&z, &[0.2]), Err(Error::ZeroComponent(0))));
    }

    #[test]
    fn cutoff_values() {
        let (a, b, e) = (1.0, 2.0, 0.1);
        assert_eq!(cutoff_h(b + 3.0 * e, a, b, e), 0.0);
        assert_eq!(cutoff_h(a - 3.0 * e, a, b, e), 0.0);
        assert_eq!(cutoff_h(1.5, a, b, e), 1.0);
        let mid = cutoff_h(b + 1.5 * e, a, b, e);
        assert!(mid > 0.0 && mid < 1.0);
        assert!(cutoff_h(b + 1.25 * e, a, b, e) > cutoff_h(b + 1.75 * e, a, b, e));
    }

    #[test]
    fn classification_patterns() {
        let g = Grid::new(&[PI], &[64]).unwrap();
        let s1 = Field::from_fn(&g, |x| x[0].sin());
        let s2 = Field::from_fn(&g, |x| (2.0 * x[0]).sin());
        let u = VecField::new(g.clone(), vec![s2.clone(), s1.clone()]).unwrap();
        let c = classify(&u, 1e-3);
        assert_eq!(c.per_component, vec![ComponentTag::SignChanging, ComponentTag::Positive]);
        assert_eq!(c.tag, SolutionTag::SemiNodal(1));
        let swapped = VecField::new(g.clone(), vec![s1.clone(), s2.clone()]).unwrap();
        assert_eq!(classify(&swapped, 1e-3).tag, SolutionTag::Mixed);
        assert_eq!(classify_with_order(&swapped, 1e-3, Some(&[1, 0])).tag, SolutionTag::SemiNodal(1));
        let neg = VecField::new(g.clone(), vec![s1.scaled(-1.0), s1.clone()]).unwrap();
        assert_eq!(classify(&neg, 1e-3).per_component[0], ComponentTag::Negative);
        assert_eq!(classify(&neg, 1e-3).tag, SolutionTag::Positive);
        let semi = VecField::new(g.clone(), vec![s1.clone(), Field::zeros(64)]).unwrap();
        assert_eq!(classify(&semi, 1e-3).tag, SolutionTag::SemiTrivial);
        assert_eq!(classify(&VecField::zeros(&g, 2), 1e-3).tag, SolutionTag::Trivial);
    }

    #[test]
    fn linear_flow_finds_ground_state() {
        let pr = problem([1e-12, 1e-12], 1e-12, [0.01, 0.01], 100);
        let basis = eigenpairs(&pr.op, 2).unwrap();
        let f = basis.phi(1).axpy(1.0, basis.phi(2));
        let init = VecField::new(pr.grid().clone(), vec![f.clone(), f]).unwrap();
        let ctl = StepControl {
            polish_below: None,
            v_tol: 1e-10,
            ..Default::default()
        };
        let rep = run_to_critical(&init, &ctl, &pr).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!((rep.energy.total - 0.5 * 0.02 * basis.lambda(1)).abs() < 1e-10);
        for l in &rep.lambdas {
            assert!((l + basis.lambda(1)).abs() < 1e-6);
        }
        for w in rep.log.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-12);
        }
    }

    #[test]
    fn converged_state_is_fixed() {
        let pr = problem([1.0, 1.0], 0.1, [1e-3, 1e-3], 80);
        let basis = eigenpairs(&pr.op, 1).unwrap();
        let init = VecField::new(pr.grid().clone(), vec![basis.phi(1).clone(), basis.phi(1).clone()]).unwrap();
        let ctl = StepControl::default();
        let rep = run_to_critical(&init, &ctl, &pr).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        let s = FlowState::at(&pr, rep.u.clone(), 0.0, 0.5, 0, ctl.v_tol).unwrap();
        assert!(s.converged);
        let next = flow_step(&s, &ctl, &pr).unwrap();
        assert_eq!(next.u, s.u);
    }

    #[test]
    fn starting_above_m1_is_flagged() {
        let pr = problem([1.0, 1.0], 0.1, [1e-3, 1e-3], 60);
        let basis = eigenpairs(&pr.op, 1).unwrap();
        let init = VecField::new(pr.grid().clone(), vec![basis.phi(1).clone(), basis.phi(1).clone()]).unwrap();
        let ctl = StepControl {
            m1: Some(-1.0),
            rho: Some(1.0),
            max_steps: 2,
            ..Default::default()
        };
        let rep = run_to_critical(&init, &ctl, &pr).unwrap();
        assert!(rep.violations.iter().any(|v| v.step == 0 && v.kind == "outside B_rho^M1"));
    }

    #[test]
    fn run_log_columns() {
        let row = LogRow {
            step: 0,
            t: 0.0,
            dt: 0.5,
            energy: 1.0,
            v_norm: 0.1,
            lambdas: vec![-1.0, -2.0],
            mass_err_max: 0.0,
            cone_lb_min: 0.0,
            in_b_rho: Some(true),
            below_m1: None,
        };
        let csv = run_log_csv(&[row], 2).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "step,t,dt,energy,v_norm,lambda_1,lambda_2,mass_err_max,cone_lb_min,in_B_rho,below_M1"
        );
        assert!(csv.lines().nth(1).unwrap().ends_with(",true,"));
    }
}
