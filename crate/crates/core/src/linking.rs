//! Spectral linking sets built from Dirichlet eigenfunctions, the
//! feasibility constants that make them link, and sampled brackets of the
//! minimax level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{norm_lp, SpectralBasis};
use crate::energy::energy;
use crate::error::{Error, Result};
use crate::flow::project_to_spheres;
use crate::model::{Aggregates, Field, VecField};
use crate::problem::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    /// rhs − lhs.
    pub margin: f64,
    pub holds: bool,
}

impl Inequality {
    fn strict(lhs: f64, rhs: f64) -> Inequality {
        Inequality {
            lhs,
            rhs,
            margin: rhs - lhs,
            holds: lhs < rhs,
        }
    }

    fn weak(lhs: f64, rhs: f64) -> Inequality {
        Inequality {
            lhs,
            rhs,
            margin: rhs - lhs,
            holds: lhs <= rhs,
        }
    }
}

/// The spectral and Sobolev numbers the feasibility conditions depend on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityConstants {
    pub sobolev_c: f64,
    pub lambda_1: f64,
    pub lambda_k: f64,
    pub lambda_k1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub k: usize,
    pub d: Option<usize>,
    pub constants: FeasibilityConstants,
    /// C⁴.
    pub c4: f64,
    pub rho_window: (f64, f64),
    pub rho_chosen: f64,
    pub rho_in_window: bool,
    pub m0: f64,
    pub m1: f64,
    pub level_condition: Inequality,
    pub gap_condition: Inequality,
    pub seminodal_level_condition: Option<Inequality>,
    pub seminodal_gap_condition: Option<Inequality>,
    pub cone_mass_cond: Vec<Inequality>,
    pub n4_level_threshold: f64,
    pub n4_rho_cond: Inequality,
    pub outside_theorem_scope: bool,
    pub feasible: bool,
    pub failed: Vec<String>,
}

/// ρ from the midpoint of Λ_{k+1}Σc < ¾ρ < ρ < 2Λ_{k+1}Σc.
pub fn recipe_rho(lambda_k1: f64, masses: &[f64]) -> f64 {
    5.0 / 3.0 * lambda_k1 * masses.iter().sum::<f64>()
}

/// `mu_pos[i]` is μ_i⁺, used by the per-component cone condition.
pub fn feasibility_from_constants(
    agg: &Aggregates,
    mu_pos: &[f64],
    masses: &[f64],
    dim: usize,
    consts: FeasibilityConstants,
    k: usize,
    d: Option<usize>,
    rho_override: Option<f64>,
) -> FeasibilityReport {
    let c4 = consts.sobolev_c.powi(4);
    let pos = agg.mu_max_pos + agg.beta_max_pos;
    let neg = agg.mu_min_neg + agg.beta_min_neg;
    let denom = 4.0 * pos - 3.0 * neg;
    let upper = if denom > 0.0 { 2.0 * c4 / denom } else { f64::INFINITY };
    let rho = rho_override.unwrap_or_else(|| recipe_rho(consts.lambda_k1, masses));
    let rho_in_window = rho > 0.0 && rho < upper;
    let m0 = 0.5 - 0.25 * pos / c4 * rho;
    let m1 = m0 * rho;
    let sum_c: f64 = masses.iter().sum();
    let sum_c2: f64 = masses.iter().map(|c| c * c).sum();
    let c_min = masses.iter().cloned().fold(f64::INFINITY, f64::min);
    let lk1 = consts.lambda_k1;
    let bracket_factor = 2.0 - neg / c4 * rho;
    let level_condition = Inequality::strict(0.25 * bracket_factor * lk1 * sum_c, m1);
    let cross = (agg.beta_max_pos - neg) / c4 * rho;
    let gap_condition = Inequality::strict(
        cross * lk1 * sum_c + agg.mu_max_pos / c4 * lk1 * lk1 * sum_c2,
        bracket_factor * (lk1 - consts.lambda_k) * c_min,
    );
    let (seminodal_level_condition, seminodal_gap_condition) = match d {
        Some(d) => {
            let (head, tail) = masses.split_at(d.min(masses.len()));
            let l1 = consts.lambda_1;
            let lin = lk1 * head.iter().sum::<f64>() + l1 * tail.iter().sum::<f64>();
            let quad = lk1 * lk1 * head.iter().map(|c| c * c).sum::<f64>()
                + l1 * l1 * tail.iter().map(|c| c * c).sum::<f64>();
            let head_min = head.iter().cloned().fold(f64::INFINITY, f64::min);
            (
                Some(level_condition),
                Some(Inequality::strict(
                    cross * lin + agg.mu_max_pos / c4 * quad,
                    bracket_factor * (lk1 - consts.lambda_k) * head_min,
                )),
            )
        }
        None => (None, None),
    };
    let c8 = c4 * c4;
    let cone_mass_cond: Vec<Inequality> = masses
        .iter()
        .enumerate()
        .map(|(i, &c)| Inequality::weak((mu_pos[i] + agg.beta_max_pos).powi(2) * rho.powi(3), consts.lambda_1 * c8 * c))
        .collect();
    let n4_level_threshold = if pos > 0.0 { 0.25 * c4 / pos } else { f64::INFINITY };
    let n4_rho_cond = Inequality::strict(
        2.0 * rho,
        if agg.beta_max_pos > 0.0 {
            consts.sobolev_c.powi(2) / agg.beta_max_pos
        } else {
            f64::INFINITY
        },
    );

    let mut failed = Vec::new();
    if !rho_in_window {
        failed.push("rho_in_window".to_string());
    }
    if !level_condition.holds {
        failed.push("level_condition".to_string());
    }
    match &seminodal_gap_condition {
        Some(g) if !g.holds => failed.push("seminodal_gap_condition".to_string()),
        Some(_) => {}
        None if !gap_condition.holds => failed.push("gap_condition".to_string()),
        None => {}
    }
    for (i, c) in cone_mass_cond.iter().enumerate() {
        if !c.holds {
            failed.push(format!("cone_mass_cond[{}]", i + 1));
        }
    }
    if dim == 4 && !n4_rho_cond.holds {
        failed.push("n4_rho_cond".to_string());
    }
    FeasibilityReport {
        k,
        d,
        constants: consts,
        c4,
        rho_window: (0.0, upper),
        rho_chosen: rho,
        rho_in_window,
        m0,
        m1,
        level_condition,
        gap_condition,
        seminodal_level_condition,
        seminodal_gap_condition,
        cone_mass_cond,
        n4_level_threshold,
        n4_rho_cond,
        outside_theorem_scope: dim < 3,
        feasible: failed.is_empty(),
        failed,
    }
}

fn check_basis(problem: &Problem, basis: &SpectralBasis, k: usize, d: Option<usize>) -> Result<()> {
    if basis.grid != *problem.grid() {
        return Err(Error::GridMismatch {
            expected: problem.grid().node_count,
            found: basis.grid.node_count,
        });
    }
    if k == 0 || basis.len() < k + 1 {
        return Err(Error::InvalidParams(format!("need at least {} eigenpairs for k = {k}", k + 1)));
    }
    if let Some(d) = d {
        if d == 0 || d >= problem.m() {
            return Err(Error::InvalidParams("d must satisfy 1 <= d < m".into()));
        }
    }
    if !basis.has_gap(k) {
        return Err(Error::MissingGap { k });
    }
    Ok(())
}

pub fn feasibility_report(
    problem: &Problem,
    basis: &SpectralBasis,
    k: usize,
    d: Option<usize>,
    rho_override: Option<f64>,
) -> Result<FeasibilityReport> {
    check_basis(problem, basis, k, d)?;
    let consts = FeasibilityConstants {
        sobolev_c: problem.sobolev()?.value,
        lambda_1: basis.lambda(1),
        lambda_k: basis.lambda(k),
        lambda_k1: basis.lambda(k + 1),
    };
    let params = &problem.params;
    let mu_pos: Vec<f64> = params.mu.iter().map(|x| x.max(0.0)).collect();
    Ok(feasibility_from_constants(
        &params.aggregates(),
        &mu_pos,
        &params.masses,
        params.dim,
        consts,
        k,
        d,
        rho_override,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    /// Product of spheres in span{φ_1..φ_k}.
    Sk,
    /// Product of half-spheres in span{φ_1..φ_{k+1}}, t_{k+1} ≥ 0.
    Mk1,
    /// Points of ∂M_{k+1}: one component has t_{k+1} = 0.
    Mk1Boundary,
    /// Points of span{φ_{k+1}..φ_{k+J}} per component inside B_ρ.
    SkPerpBrho,
    /// First d components from M_{k+1}, the rest on √c_i φ_1.
    Mk1dTimesGround,
    /// Boundary of the previous set (one of the first d has t_{k+1} = 0).
    Mk1dBoundaryTimesGround,
    /// First d components in S_k^⊥, the rest near φ_1, inside B_ρ.
    SkdPerpTimesS,
}

impl LinkKind {
    fn is_perp(self) -> bool {
        matches!(self, LinkKind::SkPerpBrho | LinkKind::SkdPerpTimesS)
    }

    fn is_seminodal(self) -> bool {
        matches!(
            self,
            LinkKind::Mk1dTimesGround | LinkKind::Mk1dBoundaryTimesGround | LinkKind::SkdPerpTimesS
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Truncation J of S_k^⊥ to span{φ_{k+1}..φ_{k+J}}; capped by the basis.
    pub j_trunc: usize,
    /// B_ρ filter for the perpendicular kinds.
    pub rho: Option<f64>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { j_trunc: 8, rho: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSampleSet {
    pub kind: LinkKind,
    pub k: usize,
    pub d: Option<usize>,
    pub points: Vec<VecField>,
    /// Eigen-coefficients of each point, per component (index j ↔ φ_{j+1}).
    pub coefficients: Vec<Vec<Vec<f64>>>,
}

type Coeffs = Vec<Vec<f64>>;

fn unit_gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn padded(mut v: Vec<f64>, offset: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; offset];
    out.append(&mut v);
    out.resize(len, 0.0);
    out
}

/// Nested truncations of e_1 + σg with σ log-uniform in [1e-3, 10]:
/// entry J'−1 keeps the first J' coordinates and renormalizes.
fn near_axis_truncations(rng: &mut ChaCha8Rng, j: usize) -> Vec<Vec<f64>> {
    let sigma = 10f64.powf(rng.random_range(-3.0..1.0));
    let mut v: Vec<f64> = (0..j).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    v[0] += 1.0;
    (1..=j)
        .map(|jj| {
            let norm = v[..jj].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-300 {
                v[..jj].iter().map(|x| x / norm).collect()
            } else {
                let mut e = vec![0.0; jj];
                e[0] = 1.0;
                e
            }
        })
        .collect()
}

struct SamplerSpec {
    kind: LinkKind,
    k: usize,
    d: usize,
    m: usize,
    j: usize,
    len: usize,
}

impl SamplerSpec {
    fn distinguished(&self) -> Coeffs {
        (0..self.m)
            .map(|i| {
                let mut t = vec![0.0; self.len];
                if i < self.d {
                    t[self.k] = 1.0;
                } else {
                    t[0] = 1.0;
                }
                t
            })
            .collect()
    }

    /// Coefficient vectors produced by draw number `draw`.
    fn draw(&self, rng: &mut ChaCha8Rng, draw: usize) -> Vec<Coeffs> {
        let (k, len) = (self.k, self.len);
        let ground = |_: &mut ChaCha8Rng| {
            let mut t = vec![0.0; len];
            t[0] = 1.0;
            t
        };
        match self.kind {
            LinkKind::Sk => vec![(0..self.m).map(|_| padded(unit_gauss(rng, k), 0, len)).collect()],
            LinkKind::Mk1 | LinkKind::Mk1dTimesGround => {
                if draw == 0 {
                    return vec![self.distinguished()];
                }
                vec![(0..self.m)
                    .map(|i| {
                        if i < self.d {
                            let mut t = unit_gauss(rng, k + 1);
                            t[k] = t[k].abs();
                            padded(t, 0, len)
                        } else {
                            ground(rng)
                        }
                    })
                    .collect()]
            }
            LinkKind::Mk1Boundary | LinkKind::Mk1dBoundaryTimesGround => {
                let s = rng.random_range(0..self.d);
                vec![(0..self.m)
                    .map(|i| {
                        if i == s {
                            padded(unit_gauss(rng, k), 0, len)
                        } else if i < self.d {
                            let mut t = unit_gauss(rng, k + 1);
                            t[k] = t[k].abs();
                            padded(t, 0, len)
                        } else {
                            ground(rng)
                        }
                    })
                    .collect()]
            }
            LinkKind::SkPerpBrho | LinkKind::SkdPerpTimesS => {
                if draw == 0 {
                    return vec![self.distinguished()];
                }
                let per: Vec<Vec<Vec<f64>>> = (0..self.m)
                    .map(|i| {
                        let offset = if i < self.d { k } else { 0 };
                        near_axis_truncations(rng, self.j)
                            .into_iter()
                            .map(|t| padded(t, offset, len))
                            .collect()
                    })
                    .collect();
                (0..self.j).map(|jj| per.iter().map(|c| c[jj].clone()).collect()).collect()
            }
        }
    }
}

fn build_spec(kind: LinkKind, k: usize, d: Option<usize>, basis: &SpectralBasis, m: usize, j_trunc: usize) -> Result<SamplerSpec> {
    if k == 0 || basis.len() < k + 1 {
        return Err(Error::InvalidParams(format!("need at least {} eigenpairs for k = {k}", k + 1)));
    }
    let d_eff = if kind.is_seminodal() {
        match d {
            Some(d) if d >= 1 && d < m => d,
            _ => return Err(Error::InvalidParams("semi-nodal sets need 1 <= d < m".into())),
        }
    } else {
        m
    };
    let j = if kind.is_perp() {
        let j = j_trunc.min(basis.len() - k);
        if j == 0 {
            return Err(Error::InvalidParams("truncation J must be positive".into()));
        }
        j
    } else {
        1
    };
    let len = if kind.is_perp() { (k + j).max(j) } else { k + 1 };
    Ok(SamplerSpec {
        kind,
        k,
        d: d_eff,
        m,
        j,
        len,
    })
}

fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    rng
}

fn kinetic_of(coeffs: &Coeffs, basis: &SpectralBasis, masses: &[f64]) -> f64 {
    coeffs
        .iter()
        .zip(masses)
        .map(|(t, c)| c * t.iter().enumerate().map(|(j, x)| x * x * basis.eigenvalues[j]).sum::<f64>())
        .sum()
}

fn field_of(coeffs: &Coeffs, basis: &SpectralBasis, masses: &[f64]) -> Result<VecField> {
    let n = basis.grid.node_count;
    let comps = coeffs
        .iter()
        .zip(masses)
        .map(|(t, c)| {
            let mut f = Field::zeros(n);
            let s = c.sqrt();
            for (j, &x) in t.iter().enumerate() {
                if x != 0.0 {
                    for (a, b) in f.values.iter_mut().zip(&basis.fields[j].values) {
                        *a += s * x * b;
                    }
                }
            }
            f
        })
        .collect();
    project_to_spheres(&VecField::new(basis.grid.clone(), comps)?, masses)
}

/// All candidate coefficient sets of the sampler, B_ρ-filtered, with
/// their draw index and truncation level.
fn candidates(spec: &SamplerSpec, basis: &SpectralBasis, masses: &[f64], count: usize, seed: u64, rho: Option<f64>) -> Vec<(usize, usize, Coeffs)> {
    (0..count)
        .into_par_iter()
        .flat_map_iter(|draw| {
            let mut rng = draw_rng(seed, draw);
            spec.draw(&mut rng, draw)
                .into_iter()
                .enumerate()
                .filter(|(_, c)| !spec.kind.is_perp() || rho.is_none_or(|r| kinetic_of(c, basis, masses) < r))
                .map(move |(t, c)| (draw, t + 1, c))
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn sample_linking_set(
    kind: LinkKind,
    k: usize,
    d: Option<usize>,
    basis: &SpectralBasis,
    masses: &[f64],
    count: usize,
    seed: u64,
    opts: &SamplerOptions,
) -> Result<LinkSampleSet> {
    if count == 0 {
        return Err(Error::InvalidParams("sample count must be at least 1".into()));
    }
    let spec = build_spec(kind, k, d, basis, masses.len(), opts.j_trunc)?;
    let cands = candidates(&spec, basis, masses, count, seed, opts.rho);
    if cands.is_empty() {
        return Err(Error::EmptySample(format!(
            "B_rho filter rejected every candidate (rho too small for k = {k})"
        )));
    }
    let points = cands
        .par_iter()
        .map(|(_, _, c)| field_of(c, basis, masses))
        .collect::<Result<Vec<_>>>()?;
    Ok(LinkSampleSet {
        kind,
        k,
        d,
        points,
        coefficients: cands.into_iter().map(|(_, _, c)| c).collect(),
    })
}

/// An extreme sample: which draw produced it and its energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub set: LinkKind,
    pub draw: usize,
    pub truncation: usize,
    pub energy: f64,
}

fn extreme_energy(
    problem: &Problem,
    basis: &SpectralBasis,
    kind: LinkKind,
    k: usize,
    d: Option<usize>,
    count: usize,
    seed: u64,
    opts: &SamplerOptions,
    maximize: bool,
) -> Result<Witness> {
    let masses = &problem.params.masses;
    let spec = build_spec(kind, k, d, basis, masses.len(), opts.j_trunc)?;
    let cands = candidates(&spec, basis, masses, count, seed, opts.rho);
    let values = cands
        .par_iter()
        .map(|(draw, t, c)| {
            let u = field_of(c, basis, masses)?;
            Ok((*draw, *t, energy(&problem.op, &u, &problem.params)?.total))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = values.into_iter().fold(None, |acc: Option<(usize, usize, f64)>, x| match acc {
        None => Some(x),
        Some(a) if (maximize && x.2 > a.2) || (!maximize && x.2 < a.2) => Some(x),
        Some(a) => Some(a),
    });
    let (draw, truncation, e) =
        best.ok_or_else(|| Error::EmptySample(format!("no admissible points for {kind:?} (rho too small for k = {k})")))?;
    Ok(Witness {
        set: kind,
        draw,
        truncation,
        energy: e,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketResult {
    pub k: usize,
    pub d: Option<usize>,
    pub samples: usize,
    pub j_trunc: usize,
    /// Sampled inf of E over S_k^⊥ ∩ B_ρ (or its semi-nodal analogue).
    pub lower: f64,
    /// Sampled sup of E over M_{k+1} (or its semi-nodal analogue).
    pub upper: f64,
    pub sup_boundary: f64,
    pub m1: f64,
    /// lower − sup_boundary.
    pub margin_left: f64,
    /// M₁ − upper.
    pub margin_right: f64,
    /// upper − lower.
    pub width: f64,
    pub feasible: bool,
    pub holds: bool,
    pub witnesses: Vec<Witness>,
}

impl BracketResult {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["k", "d", "lower", "upper", "margin_left", "margin_right"])?;
        w.write_record([
            self.k.to_string(),
            self.d.map_or(String::new(), |d| d.to_string()),
            format!("{:.17e}", self.lower),
            format!("{:.17e}", self.upper),
            format!("{:.17e}", self.margin_left),
            format!("{:.17e}", self.margin_right),
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Sampled sandwich sup_{∂M} E < inf_{S^⊥∩B_ρ} E ≤ sup_M E < M₁.
pub fn estimate_minimax_bracket(
    problem: &Problem,
    basis: &SpectralBasis,
    k: usize,
    d: Option<usize>,
    sample_count: usize,
    seed: u64,
    j_trunc: usize,
    rho_override: Option<f64>,
) -> Result<BracketResult> {
    let rep = feasibility_report(problem, basis, k, d, rho_override)?;
    let opts = SamplerOptions {
        j_trunc,
        rho: Some(rep.rho_chosen),
    };
    let (m_kind, b_kind, p_kind) = if d.is_some() {
        (LinkKind::Mk1dTimesGround, LinkKind::Mk1dBoundaryTimesGround, LinkKind::SkdPerpTimesS)
    } else {
        (LinkKind::Mk1, LinkKind::Mk1Boundary, LinkKind::SkPerpBrho)
    };
    let up = extreme_energy(problem, basis, m_kind, k, d, sample_count, seed, &opts, true)?;
    let bd = extreme_energy(problem, basis, b_kind, k, d, sample_count, seed ^ 0x5bd1e995, &opts, true)?;
    let lo = extreme_energy(problem, basis, p_kind, k, d, sample_count, seed ^ 0x9e3779b9, &opts, false)?;
    let margin_left = lo.energy - bd.energy;
    let margin_right = rep.m1 - up.energy;
    let width = up.energy - lo.energy;
    // The lower/upper comparison allows for rounding when both sets share
    // the distinguished point.
    let mid_ok = width >= -1e-14 * (1.0 + up.energy.abs());
    Ok(BracketResult {
        k,
        d,
        samples: sample_count,
        j_trunc: opts.j_trunc,
        lower: lo.energy,
        upper: up.energy,
        sup_boundary: bd.energy,
        m1: rep.m1,
        margin_left,
        margin_right,
        width,
        feasible: rep.feasible,
        holds: margin_left > 0.0 && margin_right > 0.0 && mid_ok,
        witnesses: vec![bd, lo, up],
    })
}

/// Smallest lower cone-distance surrogate min_{i,±} C‖u_i^∓‖_{L⁴} over
/// samples of S_k^⊥ ∩ B_ρ; for semi-nodal sets only the first d
/// components count.
pub fn delta0_estimate(
    problem: &Problem,
    basis: &SpectralBasis,
    k: usize,
    d: Option<usize>,
    rho: f64,
    sample_count: usize,
    seed: u64,
    j_trunc: usize,
) -> Result<f64> {
    let kind = if d.is_some() {
        LinkKind::SkdPerpTimesS
    } else {
        LinkKind::SkPerpBrho
    };
    let masses = &problem.params.masses;
    let spec = build_spec(kind, k, d, basis, masses.len(), j_trunc)?;
    let cands = candidates(&spec, basis, masses, sample_count, seed, Some(rho));
    if cands.is_empty() {
        return Err(Error::EmptySample(format!("B_rho filter rejected every candidate (rho too small for k = {k})")));
    }
    let c = problem.sobolev()?.value;
    let active = d.unwrap_or(masses.len());
    let mins = cands
        .par_iter()
        .map(|(_, _, co)| {
            let u = field_of(co, basis, masses)?;
            cone_lower_min(&u, c, active)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mins.into_iter().fold(f64::INFINITY, f64::min))
}

/// min over the first `active` components and both signs of C‖u_i^∓‖_{L⁴}.
pub fn cone_lower_min(u: &VecField, sobolev_c: f64, active: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for f in u.components.iter().take(active) {
        best = best
            .min(sobolev_c * norm_lp(&u.grid, &f.negative_part(), 4.0)?)
            .min(sobolev_c * norm_lp(&u.grid, &f.positive_part(), 4.0)?);
    }
    Ok(best)
}

/// (√c_i φ_{k+1})_i, or with the components after d on √c_i φ_1.
pub fn distinguished_point(basis: &SpectralBasis, masses: &[f64], k: usize, d: Option<usize>) -> Result<VecField> {
    if basis.len() < k + 1 {
        return Err(Error::InvalidParams(format!("need at least {} eigenpairs for k = {k}", k + 1)));
    }
    let d = d.unwrap_or(masses.len());
    let comps = masses
        .iter()
        .enumerate()
        .map(|(i, c)| basis.phi(if i < d { k + 1 } else { 1 }).scaled(c.sqrt()))
        .collect();
    project_to_spheres(&VecField::new(basis.grid.clone(), comps)?, masses)
}

/// Highest-energy sampled point of M_{k+1} (or its semi-nodal analogue)
/// whose sign-changing components all lie outside the δ-tubes.
pub fn highest_energy_sample(
    problem: &Problem,
    basis: &SpectralBasis,
    k: usize,
    d: Option<usize>,
    delta: f64,
    sample_count: usize,
    seed: u64,
) -> Result<Option<(VecField, f64)>> {
    let kind = if d.is_some() {
        LinkKind::Mk1dTimesGround
    } else {
        LinkKind::Mk1
    };
    let masses = &problem.params.masses;
    let spec = build_spec(kind, k, d, basis, masses.len(), 1)?;
    let c = problem.sobolev()?.value;
    let active = d.unwrap_or(masses.len());
    let cands = candidates(&spec, basis, masses, sample_count, seed, None);
    let scored = cands
        .par_iter()
        .map(|(_, _, co)| {
            let u = field_of(co, basis, masses)?;
            if cone_lower_min(&u, c, active)? > delta {
                let e = energy(&problem.op, &u, &problem.params)?.total;
                Ok(Some((u, e)))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scored
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<(VecField, f64)>, x| match acc {
            Some(a) if a.1 >= x.1 => Some(a),
            _ => Some(x),
        }))
}
