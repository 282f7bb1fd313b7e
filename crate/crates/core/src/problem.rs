use std::sync::{Arc, OnceLock};

use crate::discretization::{estimate_sobolev_c4, LaplacianOp, LinearSolverOptions, SobolevEstimate, SobolevOptions};
use crate::error::{Error, Result};
use crate::model::{Grid, ValidParams};

/// A validated system on a concrete grid, with the lazily computed
/// Sobolev constant shared between copies that keep the grid.
#[derive(Clone, Debug)]
pub struct Problem {
    pub params: ValidParams,
    pub op: LaplacianOp,
    pub solver: LinearSolverOptions,
    pub sobolev_opts: SobolevOptions,
    sobolev: Arc<OnceLock<SobolevEstimate>>,
}

impl Problem {
    pub fn new(params: ValidParams, sizes: &[usize]) -> Result<Problem> {
        if sizes.len() != params.dim {
            return Err(Error::InvalidParams("sizes must have dim entries".into()));
        }
        let grid = Grid::new(&params.lengths, sizes)?;
        Ok(Problem {
            op: LaplacianOp::new(&grid),
            params,
            solver: LinearSolverOptions::default(),
            sobolev_opts: SobolevOptions::default(),
            sobolev: Arc::new(OnceLock::new()),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.op.grid
    }

    pub fn m(&self) -> usize {
        self.params.m
    }

    /// The discrete Sobolev estimate, computed on first use.
    pub fn sobolev(&self) -> Result<SobolevEstimate> {
        if let Some(s) = self.sobolev.get() {
            return Ok(*s);
        }
        let s = estimate_sobolev_c4(&self.op, &self.sobolev_opts)?;
        Ok(*self.sobolev.get_or_init(|| s))
    }

    /// Preset the Sobolev constant (for example from a previous run).
    pub fn set_sobolev(&self, s: SobolevEstimate) {
        let _ = self.sobolev.set(s);
    }

    /// Same grid and caches, different parameters (e.g. new masses).
    pub fn with_params(&self, params: ValidParams) -> Result<Problem> {
        if params.lengths != self.params.lengths || params.dim != self.params.dim {
            return Err(Error::InvalidParams("geometry differs from the problem grid".into()));
        }
        Ok(Problem {
            params,
            op: self.op.clone(),
            solver: self.solver,
            sobolev_opts: self.sobolev_opts,
            sobolev: self.sobolev.clone(),
        })
    }

    pub fn with_masses(&self, masses: &[f64]) -> Result<Problem> {
        self.with_params(self.params.with_masses(masses)?)
    }
}
