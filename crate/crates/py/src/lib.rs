//! Python bindings. Reports come back as plain dicts decoded from the same
//! JSON the command-line tool writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use nodal_core::cli::{self, RunConfig};
use nodal_core::energy::energy;
use nodal_core::flow::{classify, project_to_spheres};
use nodal_core::model::{Field, VecField};
use nodal_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParams(_) | Error::Config(_) | Error::GridMismatch { .. } | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated run configuration together with the discretized problem.
#[pyclass(name = "Problem", module = "nodal")]
struct PyProblem {
    cfg: RunConfig,
    problem: nodal_core::problem::Problem,
}

impl PyProblem {
    fn field(&self, components: Vec<Vec<f64>>) -> PyResult<VecField> {
        let fields = components.into_iter().map(|values| Field { values }).collect();
        VecField::new(self.problem.grid().clone(), fields).map_err(to_py)
    }
}

#[pymethods]
impl PyProblem {
    /// Build from a JSON configuration string using the command-line schema.
    #[new]
    fn new(config: &str) -> PyResult<Self> {
        let cfg = cli::parse_config(config).map_err(to_py)?;
        let problem = cfg.problem().map_err(to_py)?;
        Ok(PyProblem { cfg, problem })
    }

    #[getter]
    fn m(&self) -> usize {
        self.problem.m()
    }

    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.problem.params.masses.clone()
    }

    #[getter]
    fn grid_points(&self) -> usize {
        self.problem.grid().sizes.iter().product()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.cfg)
    }

    fn sobolev_constant(&self) -> PyResult<f64> {
        Ok(self.problem.sobolev().map_err(to_py)?.value)
    }

    fn eigenvalues(&self) -> PyResult<Vec<f64>> {
        let basis = cli::run_spectrum(&self.cfg).map_err(to_py)?;
        Ok((1..=basis.len()).map(|k| basis.lambda(k)).collect())
    }

    /// Energy breakdown of a field given as one list of nodal values per component.
    fn energy<'py>(&self, py: Python<'py>, u: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let u = self.field(u)?;
        to_dict(py, &energy(&self.problem.op, &u, &self.problem.params).map_err(to_py)?)
    }

    fn project(&self, u: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let u = self.field(u)?;
        let p = project_to_spheres(&u, &self.problem.params.masses).map_err(to_py)?;
        Ok(p.components.into_iter().map(|f| f.values).collect())
    }

    fn classify<'py>(&self, py: Python<'py>, u: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let u = self.field(u)?;
        to_dict(py, &classify(&u, self.cfg.theta))
    }

    fn feasibility<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &cli::run_feasibility(&self.cfg).map_err(to_py)?)
    }

    /// Returns `(feasibility, solve_report)`; the report is `None` when the
    /// parameters are infeasible.
    fn solve<'py>(&self, py: Python<'py>) -> PyResult<(Bound<'py, PyAny>, Option<Bound<'py, PyAny>>)> {
        let (feas, report) = py.detach(|| cli::run_solve(&self.cfg)).map_err(to_py)?;
        let report = report.map(|r| to_dict(py, &r)).transpose()?;
        Ok((to_dict(py, &feas)?, report))
    }

    fn bracket<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let b = py.detach(|| cli::run_bracket(&self.cfg)).map_err(to_py)?;
        to_dict(py, &b)
    }

    fn sweep<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rep = py.detach(|| cli::run_sweep(&self.cfg)).map_err(to_py)?;
        to_dict(py, &rep)
    }
}

/// Run a configuration exactly as the `nodal` tool would, writing
/// artifacts into `out`. Returns the exit code.
#[pyfunction]
fn run_config(config: &str, out: &str) -> PyResult<i32> {
    let cfg = cli::parse_config(config).map_err(to_py)?;
    match cli::dispatch(&cfg, std::path::Path::new(out)) {
        Ok(o) => Ok(o.code),
        Err(e) => Ok(cli::error_code(&e)),
    }
}

#[pymodule]
fn nodal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
