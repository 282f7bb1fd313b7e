//! Small-mass sweeps along a ray of mass vectors: warm-started solves whose
//! multipliers and normalized profiles are compared with the Dirichlet
//! spectrum.

use serde::{Deserialize, Serialize};

use crate::discretization::{inner_l2, SpectralBasis};
use crate::energy::{euler_lagrange_residual, kinetic_sum};
use crate::error::{Error, Result};
use crate::flow::{classify_with_order, project_to_spheres, run_to_critical, SolveStatus, StepControl};
use crate::linking::{distinguished_point, feasibility_report};
use crate::model::{Classification, Field, VecField};
use crate::problem::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    Positive,
    /// Every component follows φ_k.
    SignChanging { k: usize },
    /// The first d components follow φ_k, the rest φ_1.
    SemiNodal { k: usize, d: usize },
}

impl SweepTarget {
    /// 1-based eigen-index followed by each of `m` components.
    pub fn indices(&self, m: usize) -> Vec<usize> {
        match *self {
            SweepTarget::Positive => vec![1; m],
            SweepTarget::SignChanging { k } => vec![k; m],
            SweepTarget::SemiNodal { k, d } => (0..m).map(|i| if i < d { k } else { 1 }).collect(),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        match *self {
            SweepTarget::Positive => Ok(()),
            SweepTarget::SignChanging { k } if k >= 2 => Ok(()),
            SweepTarget::SemiNodal { k, d } if k >= 2 && d >= 1 && d < m => Ok(()),
            _ => Err(Error::InvalidParams(
                "sign-changing targets need k >= 2 and semi-nodal ones 1 <= d < m".into(),
            )),
        }
    }

    /// Linking index and split used for the feasibility check, if any.
    fn linking(&self) -> Option<(usize, Option<usize>)> {
        match *self {
            SweepTarget::Positive => None,
            SweepTarget::SignChanging { k } => Some((k - 1, None)),
            SweepTarget::SemiNodal { k, d } => Some((k - 1, Some(d))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub r: f64,
    pub masses: Vec<f64>,
    pub status: SolveStatus,
    pub converged: bool,
    pub warm_started: bool,
    pub feasible: Option<bool>,
    /// None for components that are identically zero (semi-trivial sweeps).
    pub lambdas: Vec<Option<f64>>,
    pub minus_lambdas: Vec<Option<f64>>,
    /// |−λ_i − Λ_target,i| / Λ_target,i.
    pub rel_errors: Vec<Option<f64>>,
    pub energy: f64,
    pub v_norm: f64,
    pub el_residual: f64,
    /// min over j and sign of ‖v_i ∓ φ_j‖_{L²} with v_i = u_i/√c_i.
    pub profile_dist: Vec<Option<f64>>,
    /// The same distance to the target eigenfunction only.
    pub target_dist: Vec<Option<f64>>,
    pub profile_norms: Vec<f64>,
    pub classification: Classification,
    /// Σ‖∇u_i‖² / Σ c_i Λ_target,i.
    pub kinetic_ratio: f64,
    /// Full-system residual of the zero-padded field (semi-trivial sweeps).
    pub embedded_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Per component: relative multiplier error strictly decreasing along
    /// the radius ladder.
    pub error_decreasing: Vec<bool>,
    pub final_rel_errors: Vec<Option<f64>>,
    pub final_target_dist: Vec<Option<f64>>,
    pub all_converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub direction: Vec<f64>,
    pub radii: Vec<f64>,
    pub target: SweepTarget,
    pub target_indices: Vec<usize>,
    pub target_eigenvalues: Vec<f64>,
    /// Components carried by the reduced system, for semi-trivial sweeps.
    pub active: Option<Vec<usize>>,
    pub records: Vec<SweepRecord>,
    pub trend: Trend,
    pub final_u: Option<VecField>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let m = self.target_indices.len().max(self.records.first().map_or(0, |r| r.lambdas.len()));
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["r".to_string()];
        header.extend((1..=m).map(|i| format!("lambda_{i}")));
        header.extend((1..=m).map(|i| format!("minus_lambda_{i}")));
        header.extend((1..=m).map(|i| format!("profile_dist_{i}")));
        header.extend(["energy".to_string(), "converged".to_string()]);
        w.write_record(&header)?;
        let opt = |x: &Option<f64>| x.map_or(String::new(), |v| format!("{v:.17e}"));
        for r in &self.records {
            let mut row = vec![format!("{:.17e}", r.r)];
            row.extend(r.lambdas.iter().map(opt));
            row.extend(r.minus_lambdas.iter().map(opt));
            row.extend(r.profile_dist.iter().map(opt));
            row.push(format!("{:.17e}", r.energy));
            row.push(r.converged.to_string());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn signed_distance(grid: &crate::model::Grid, v: &Field, phi: &Field) -> Result<f64> {
    let plus = v.axpy(-1.0, phi);
    let minus = v.axpy(1.0, phi);
    Ok(inner_l2(grid, &plus, &plus)?.min(inner_l2(grid, &minus, &minus)?).max(0.0).sqrt())
}

fn validate_ladder(direction: &[f64], radii: &[f64], m: usize) -> Result<()> {
    if direction.len() != m {
        return Err(Error::InvalidParams(format!("direction needs {m} entries")));
    }
    if direction.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParams("direction entries must be positive".into()));
    }
    if (direction.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParams("direction must sum to 1".into()));
    }
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParams("radii must be positive".into()));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParams("radii must be strictly decreasing".into()));
    }
    Ok(())
}

fn cold_start(basis: &SpectralBasis, masses: &[f64], indices: &[usize]) -> Result<VecField> {
    let comps = indices
        .iter()
        .zip(masses)
        .map(|(&j, c)| basis.phi(j).scaled(c.sqrt()))
        .collect();
    project_to_spheres(&VecField::new(basis.grid.clone(), comps)?, masses)
}

/// Sweep the masses r·direction over decreasing radii, tracking one branch
/// by warm starts.
pub fn sweep(
    problem: &Problem,
    basis: &SpectralBasis,
    direction: &[f64],
    radii: &[f64],
    target: SweepTarget,
    ctl: &StepControl,
) -> Result<SweepReport> {
    Ok(sweep_inner(problem, basis, direction, radii, target, ctl)?.0)
}

fn sweep_inner(
    problem: &Problem,
    basis: &SpectralBasis,
    direction: &[f64],
    radii: &[f64],
    target: SweepTarget,
    ctl: &StepControl,
) -> Result<(SweepReport, Vec<VecField>)> {
    let m = problem.m();
    validate_ladder(direction, radii, m)?;
    target.validate(m)?;
    let indices = target.indices(m);
    let top = *indices.iter().max().expect("m >= 1");
    if basis.len() < top + 1 {
        return Err(Error::InvalidParams(format!("basis needs at least {} eigenpairs", top + 1)));
    }
    let target_eigenvalues: Vec<f64> = indices.iter().map(|&j| basis.lambda(j)).collect();
    let mut ctl = ctl.clone();
    if ctl.order.is_none() {
        ctl.order = Some((0..m).collect());
    }
    let mut records = Vec::with_capacity(radii.len());
    let mut prev: Option<VecField> = None;
    let mut fields = Vec::with_capacity(radii.len());
    for &r in radii {
        let masses: Vec<f64> = direction.iter().map(|t| r * t).collect();
        let pr = problem.with_masses(&masses)?;
        let feasible = match target.linking() {
            None => None,
            Some((k, d)) => match feasibility_report(&pr, basis, k, d, None) {
                Ok(rep) => Some(rep.feasible),
                Err(Error::MissingGap { .. }) => Some(false),
                Err(e) => return Err(e),
            },
        };
        let cold = match target {
            SweepTarget::SemiNodal { k, d } => distinguished_point(basis, &masses, k - 1, Some(d))?,
            _ => cold_start(basis, &masses, &indices)?,
        };
        let (mut rep, mut warm) = match &prev {
            Some(u) => (run_to_critical(&project_to_spheres(u, &masses)?, &ctl, &pr)?, true),
            None => (run_to_critical(&cold, &ctl, &pr)?, false),
        };
        if warm && rep.status != SolveStatus::Converged {
            rep = run_to_critical(&cold, &ctl, &pr)?;
            warm = false;
        }
        let converged = rep.status == SolveStatus::Converged;
        let grid = pr.grid();
        let mut profile_dist = Vec::with_capacity(m);
        let mut target_dist = Vec::with_capacity(m);
        let mut profile_norms = Vec::with_capacity(m);
        for (i, (f, c)) in rep.u.components.iter().zip(&masses).enumerate() {
            let v = f.scaled(1.0 / c.sqrt());
            profile_norms.push(inner_l2(grid, &v, &v)?.sqrt());
            let mut best = f64::INFINITY;
            for phi in &basis.fields {
                best = best.min(signed_distance(grid, &v, phi)?);
            }
            profile_dist.push(Some(best));
            target_dist.push(Some(signed_distance(grid, &v, basis.phi(indices[i]))?));
        }
        let denom: f64 = masses.iter().zip(&target_eigenvalues).map(|(c, l)| c * l).sum();
        let kinetic_ratio = kinetic_sum(&pr.op, &rep.u)? / denom;
        records.push(SweepRecord {
            r,
            masses: masses.clone(),
            status: rep.status,
            converged,
            warm_started: warm,
            feasible,
            lambdas: rep.lambdas.iter().map(|&l| Some(l)).collect(),
            minus_lambdas: rep.lambdas.iter().map(|&l| Some(-l)).collect(),
            rel_errors: rep
                .lambdas
                .iter()
                .zip(&target_eigenvalues)
                .map(|(l, t)| Some((-l - t).abs() / t))
                .collect(),
            energy: rep.energy.total,
            v_norm: rep.v_norm,
            el_residual: rep.el_residual,
            profile_dist,
            target_dist,
            profile_norms,
            classification: rep.classification.clone(),
            kinetic_ratio,
            embedded_residual: None,
        });
        prev = if converged { Some(rep.u.clone()) } else { None };
        fields.push(rep.u);
    }
    let trend = trend_of(&records);
    let final_u = fields.last().cloned();
    let report = SweepReport {
        direction: direction.to_vec(),
        radii: radii.to_vec(),
        target,
        target_indices: indices,
        target_eigenvalues,
        active: None,
        records,
        trend,
        final_u,
    };
    Ok((report, fields))
}

fn trend_of(records: &[SweepRecord]) -> Trend {
    let m = records.first().map_or(0, |r| r.rel_errors.len());
    let error_decreasing = (0..m)
        .map(|i| {
            let errs: Vec<Option<f64>> = records.iter().map(|r| r.rel_errors[i]).collect();
            errs.iter().all(|e| e.is_some())
                && errs.windows(2).all(|w| w[1].unwrap() < w[0].unwrap())
                || errs.iter().all(|e| e.is_none())
        })
        .collect();
    let last = records.last();
    Trend {
        error_decreasing,
        final_rel_errors: last.map_or(Vec::new(), |r| r.rel_errors.clone()),
        final_target_dist: last.map_or(Vec::new(), |r| r.target_dist.clone()),
        all_converged: records.iter().all(|r| r.converged),
    }
}

/// Sweep the reduced system on `active` and pad each solution with zero
/// components; `direction` and `target` refer to the reduced system, and
/// so do the report's target indices and eigenvalues.
pub fn semi_trivial_sweep(
    problem: &Problem,
    basis: &SpectralBasis,
    active: &[usize],
    direction: &[f64],
    radii: &[f64],
    target: SweepTarget,
    ctl: &StepControl,
) -> Result<SweepReport> {
    let m = problem.m();
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != active.len() || active.is_empty() || active.len() >= m {
        return Err(Error::InvalidParams("active must be a nonempty proper subset without repeats".into()));
    }
    let reduced = problem.with_params(problem.params.restrict(active)?)?;
    let mut rctl = ctl.clone();
    rctl.positive_components = ctl
        .positive_components
        .iter()
        .filter_map(|i| active.iter().position(|a| a == i))
        .collect();
    rctl.order = None;
    let (mut rep, fields) = sweep_inner(&reduced, basis, direction, radii, target, &rctl)?;

    let grid = problem.grid();
    let spread = |xs: &[Option<f64>]| -> Vec<Option<f64>> {
        let mut out = vec![None; m];
        for (slot, &i) in active.iter().enumerate() {
            out[i] = xs[slot];
        }
        out
    };
    let mut final_u = None;
    for (rec, u) in rep.records.iter_mut().zip(fields) {
        let mut comps = vec![Field::zeros(grid.node_count); m];
        let mut full_masses = problem.params.masses.clone();
        let mut full_lambdas = vec![0.0; m];
        for (slot, &i) in active.iter().enumerate() {
            comps[i] = u.components[slot].clone();
            full_masses[i] = rec.masses[slot];
            full_lambdas[i] = rec.lambdas[slot].unwrap_or(0.0);
        }
        let full = VecField::new(grid.clone(), comps)?;
        let full_params = problem.params.with_masses(&full_masses)?;
        rec.embedded_residual = Some(euler_lagrange_residual(&problem.op, &full, &full_lambdas, &full_params)?);
        rec.classification = classify_with_order(&full, ctl.theta, None);
        rec.lambdas = spread(&rec.lambdas);
        rec.minus_lambdas = spread(&rec.minus_lambdas);
        rec.rel_errors = spread(&rec.rel_errors);
        rec.profile_dist = spread(&rec.profile_dist);
        rec.target_dist = spread(&rec.target_dist);
        let mut norms = vec![0.0; m];
        let mut masses = vec![0.0; m];
        for (slot, &i) in active.iter().enumerate() {
            norms[i] = rec.profile_norms[slot];
            masses[i] = rec.masses[slot];
        }
        rec.profile_norms = norms;
        rec.masses = masses;
        final_u = Some(full);
    }
    rep.final_u = final_u;
    rep.active = Some(active.to_vec());
    rep.trend = trend_of(&rep.records);
    Ok(rep)
}
