//! Batch front end: a flat JSON run configuration, command dispatch and
//! artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::acceptance::run_all;
use crate::bifurcation::{semi_trivial_sweep, sweep, SweepReport, SweepTarget};
use crate::discretization::{eigenpairs, SpectralBasis};
use crate::error::{Error, Result};
use crate::flow::{run_log_csv, run_to_critical, CutoffBand, SolveReport, SolveStatus, StepControl};
use crate::linking::{
    delta0_estimate, distinguished_point, estimate_minimax_bracket, feasibility_report, BracketResult, FeasibilityReport,
};
use crate::model::{validate_params, SystemParams};
use crate::problem::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Spectrum,
    Feasibility,
    Solve,
    Bracket,
    Sweep,
    Selftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Positive,
    SignChanging,
    SemiNodal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Command,
    pub mu: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub sizes: Vec<usize>,
    /// Number of eigenpairs to compute.
    #[serde(rename = "K")]
    pub eigen_count: usize,

    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub armijo: f64,
    pub growth: f64,
    pub v_tol: f64,
    pub max_steps: usize,
    pub delta: Option<f64>,
    pub rho: Option<f64>,
    pub polish_below: Option<f64>,
    pub cutoff: Option<CutoffBand>,
    pub theta: f64,
    pub order: Option<Vec<usize>>,

    pub k: usize,
    pub d: Option<usize>,
    pub samples: usize,
    #[serde(rename = "J")]
    pub j_trunc: usize,
    pub seed: u64,

    pub direction: Option<Vec<f64>>,
    pub radii: Vec<f64>,
    pub target: TargetKind,
    pub target_k: usize,
    pub active: Option<Vec<usize>>,

    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ctl = StepControl::default();
        RunConfig {
            command: Command::Spectrum,
            mu: vec![1.0, 1.0],
            beta: vec![vec![0.0, 0.1], vec![0.1, 0.0]],
            masses: vec![1e-3, 1e-3],
            dim: 1,
            lengths: vec![std::f64::consts::PI],
            sizes: vec![200],
            eigen_count: 8,
            dt_init: ctl.dt_init,
            dt_min: ctl.dt_min,
            dt_max: ctl.dt_max,
            armijo: ctl.armijo_factor,
            growth: ctl.growth,
            v_tol: ctl.v_tol,
            max_steps: ctl.max_steps,
            delta: None,
            rho: None,
            polish_below: ctl.polish_below,
            cutoff: None,
            theta: ctl.theta,
            order: None,
            k: 1,
            d: None,
            samples: 10_000,
            j_trunc: 8,
            seed: 0,
            direction: None,
            radii: vec![1e-2, 1e-3, 1e-4],
            target: TargetKind::Positive,
            target_k: 2,
            active: None,
            out: "out".to_string(),
        }
    }
}

impl RunConfig {
    pub fn system_params(&self) -> SystemParams {
        SystemParams {
            m: self.mu.len(),
            mu: self.mu.clone(),
            beta: self.beta.clone(),
            masses: self.masses.clone(),
            dim: self.dim,
            lengths: self.lengths.clone(),
        }
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            dt_init: self.dt_init,
            dt_min: self.dt_min,
            dt_max: self.dt_max,
            armijo_factor: self.armijo,
            growth: self.growth,
            v_tol: self.v_tol,
            max_steps: self.max_steps,
            delta: self.delta,
            rho: self.rho,
            m1: None,
            cutoff: self.cutoff,
            polish_below: self.polish_below,
            positive_components: Vec::new(),
            theta: self.theta,
            order: self.order.clone(),
        }
    }

    pub fn sweep_target(&self) -> SweepTarget {
        match self.target {
            TargetKind::Positive => SweepTarget::Positive,
            TargetKind::SignChanging => SweepTarget::SignChanging { k: self.target_k },
            TargetKind::SemiNodal => SweepTarget::SemiNodal {
                k: self.target_k,
                d: self.d.unwrap_or(1),
            },
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(validate_params(self.system_params())?, &self.sizes)
    }
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    validate_params(cfg.system_params())?;
    if cfg.sizes.len() != cfg.dim || cfg.sizes.contains(&0) {
        return Err(Error::Config("sizes must have dim positive entries".into()));
    }
    cfg.step_control().validate()?;
    if cfg.eigen_count == 0 || cfg.k == 0 || cfg.samples == 0 || cfg.j_trunc == 0 {
        return Err(Error::Config("K, k, samples and J must be positive".into()));
    }
    if let Some(d) = cfg.d {
        if d == 0 || d >= cfg.mu.len() {
            return Err(Error::Config("d must satisfy 1 <= d < m".into()));
        }
    }
    if let Some(order) = &cfg.order {
        let mut o = order.clone();
        o.sort_unstable();
        if o != (0..cfg.mu.len()).collect::<Vec<_>>() {
            return Err(Error::Config("order must be a permutation of 0..m".into()));
        }
    }
    Ok(cfg)
}

#[derive(Parser, Debug)]
#[command(name = "nodal", about = "Normalized solutions of coupled cubic Schrödinger systems on boxes")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

/// Outcome of a command: 0 success, 2 a reported numerical issue.
pub struct Outcome {
    pub code: i32,
    pub summary: String,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn basis_for(problem: &Problem, cfg: &RunConfig, need: usize) -> Result<SpectralBasis> {
    eigenpairs(&problem.op, cfg.eigen_count.max(need))
}

fn status_code(ok: bool) -> i32 {
    if ok {
        0
    } else {
        2
    }
}

pub fn run_spectrum(cfg: &RunConfig) -> Result<SpectralBasis> {
    eigenpairs(&cfg.problem()?.op, cfg.eigen_count)
}

pub fn run_feasibility(cfg: &RunConfig) -> Result<FeasibilityReport> {
    let problem = cfg.problem()?;
    let basis = basis_for(&problem, cfg, cfg.k + 1)?;
    feasibility_report(&problem, &basis, cfg.k, cfg.d, cfg.rho)
}

/// Feasibility check followed, when feasible, by the flow from the
/// distinguished linking point.
pub fn run_solve(cfg: &RunConfig) -> Result<(FeasibilityReport, Option<SolveReport>)> {
    let problem = cfg.problem()?;
    let basis = basis_for(&problem, cfg, cfg.k + cfg.j_trunc)?;
    let rep = feasibility_report(&problem, &basis, cfg.k, cfg.d, cfg.rho)?;
    if !rep.feasible {
        return Ok((rep, None));
    }
    let mut ctl = cfg.step_control();
    ctl.rho = Some(rep.rho_chosen);
    ctl.m1 = Some(rep.m1);
    if ctl.delta.is_none() {
        let d0 = delta0_estimate(&problem, &basis, cfg.k, cfg.d, rep.rho_chosen, cfg.samples, cfg.seed, cfg.j_trunc)?;
        ctl.delta = Some(0.1 * d0);
    }
    if let Some(d) = cfg.d {
        ctl.positive_components = (d..problem.m()).collect();
    }
    let init = distinguished_point(&basis, &problem.params.masses, cfg.k, cfg.d)?;
    let report = run_to_critical(&init, &ctl, &problem)?;
    Ok((rep, Some(report)))
}

pub fn run_bracket(cfg: &RunConfig) -> Result<BracketResult> {
    let problem = cfg.problem()?;
    let basis = basis_for(&problem, cfg, cfg.k + cfg.j_trunc)?;
    estimate_minimax_bracket(&problem, &basis, cfg.k, cfg.d, cfg.samples, cfg.seed, cfg.j_trunc, cfg.rho)
}

/// Small-mass sweep; restricted to `active` components when set. The
/// default direction is uniform over the components being swept.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let problem = cfg.problem()?;
    let target = cfg.sweep_target();
    let basis = basis_for(&problem, cfg, cfg.target_k + 1)?;
    let ctl = cfg.step_control();
    match &cfg.active {
        Some(active) => {
            let dir_v = cfg.direction.clone().unwrap_or_else(|| vec![1.0 / active.len() as f64; active.len()]);
            semi_trivial_sweep(&problem, &basis, active, &dir_v, &cfg.radii, target, &ctl)
        }
        None => {
            let m = problem.m();
            let dir_v = cfg.direction.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
            sweep(&problem, &basis, &dir_v, &cfg.radii, target, &ctl)
        }
    }
}

/// Run the configured command, writing artifacts into `dir`.
pub fn dispatch(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    fs::create_dir_all(dir)?;
    write(dir, "config.json", &serde_json::to_string_pretty(cfg)?)?;
    match cfg.command {
        Command::Spectrum => {
            let basis = run_spectrum(cfg)?;
            write(dir, "spectrum.csv", &basis.to_csv()?)?;
            write(dir, "eigenfields.json", &serde_json::to_string(&basis)?)?;
            Ok(Outcome {
                code: 0,
                summary: format!("{} eigenvalues, lowest {:.10}", basis.len(), basis.lambda(1)),
            })
        }
        Command::Feasibility => {
            let rep = run_feasibility(cfg)?;
            write(dir, "feasibility.json", &serde_json::to_string_pretty(&rep)?)?;
            Ok(feasibility_outcome(&rep))
        }
        Command::Solve => {
            let (rep, report) = run_solve(cfg)?;
            write(dir, "feasibility.json", &serde_json::to_string_pretty(&rep)?)?;
            let Some(report) = report else {
                return Ok(feasibility_outcome(&rep));
            };
            write(dir, "run_log.csv", &run_log_csv(&report.log, cfg.mu.len())?)?;
            write(dir, "solve_report.json", &serde_json::to_string_pretty(&report)?)?;
            Ok(Outcome {
                code: status_code(report.status == SolveStatus::Converged),
                summary: format!(
                    "{:?} after {} steps, |V| {:.2e}, {:?}",
                    report.status, report.steps, report.v_norm, report.classification.tag
                ),
            })
        }
        Command::Bracket => {
            let b = run_bracket(cfg)?;
            write(dir, "bracket.csv", &b.to_csv()?)?;
            write(dir, "bracket.json", &serde_json::to_string_pretty(&b)?)?;
            Ok(Outcome {
                code: status_code(b.holds),
                summary: format!(
                    "lower {:.6e}, upper {:.6e}, margins {:.2e}/{:.2e}",
                    b.lower, b.upper, b.margin_left, b.margin_right
                ),
            })
        }
        Command::Sweep => {
            let rep = run_sweep(cfg)?;
            write(dir, "sweep.csv", &rep.to_csv()?)?;
            write(dir, "sweep.json", &serde_json::to_string_pretty(&rep)?)?;
            Ok(Outcome {
                code: status_code(rep.trend.all_converged),
                summary: format!(
                    "{} radii, final relative errors {:?}",
                    rep.records.len(),
                    rep.trend.final_rel_errors
                ),
            })
        }
        Command::Selftest => {
            let results = run_all(|_| {});
            let lines: Vec<String> = results.iter().map(|r| r.line()).collect();
            write(dir, "selftest.txt", &(lines.join("\n") + "\n"))?;
            let passed = results.iter().filter(|r| r.passed).count();
            Ok(Outcome {
                code: status_code(passed == results.len()),
                summary: format!("{}\n{passed} of {} criteria passed", lines.join("\n"), results.len()),
            })
        }
    }
}

fn feasibility_outcome(rep: &FeasibilityReport) -> Outcome {
    Outcome {
        code: status_code(rep.feasible),
        summary: if rep.feasible {
            format!("feasible, rho {:.4e}, M1 {:.4e}", rep.rho_chosen, rep.m1)
        } else {
            format!("infeasible: {}", rep.failed.join(", "))
        },
    }
}

/// Exit code for an error: 1 for configuration problems, 2 for numerical
/// failures the run reported.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParams(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::GridMismatch { .. } => 1,
        _ => 2,
    }
}

/// Full command-line entry point; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let text = match fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", cli.config.display());
            return 1;
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    let dir = PathBuf::from(&cfg.out);
    match dispatch(&cfg, &dir) {
        Ok(o) => {
            if !cli.quiet {
                println!("{}", o.summary);
            }
            o.code
        }
        Err(e) => {
            eprintln!("{e}");
            error_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"command":"spectrum","dim":1,"lengths":[3.14159265],"sizes":[200],"K":5}"#).unwrap();
        assert_eq!(cfg.eigen_count, 5);
        assert_eq!(cfg.mu, vec![1.0, 1.0]);
        assert_eq!(cfg.samples, 10_000);
    }

    #[test]
    fn zero_coupling_is_rejected() {
        let err = parse_config(r#"{"command":"solve","beta":[[0,0]]}"#).unwrap_err();
        assert!(err.to_string().contains("coupling must be nonzero"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse_config(r#"{"command":"spectrum","mass":[1]}"#), Err(Error::Config(_))));
        assert!(matches!(parse_config(r#"{"command":"spectrum","K":"five"}"#), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = RunConfig {
            d: Some(1),
            delta: Some(1e-3),
            cutoff: Some(CutoffBand { a: 0.1, b: 0.2, eps: 0.01 }),
            ..Default::default()
        };
        cfg.masses = vec![0.1 + 0.2, 1.0 / 3.0];
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn config_errors_map_to_exit_one() {
        assert_eq!(error_code(&Error::Config("x".into())), 1);
        assert_eq!(error_code(&Error::MissingGap { k: 1 }), 2);
    }
}
