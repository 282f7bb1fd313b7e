//! Normalized solutions of m-coupled cubic Gross–Pitaevskii systems on
//! Dirichlet boxes: discretization, energy, the pseudogradient flow,
//! linking-set feasibility and small-mass bifurcation sweeps.

pub mod error;
pub mod model;
pub mod linalg;
pub mod discretization;
pub mod energy;
pub mod gmap;
pub mod problem;
pub mod flow;
pub mod linking;
pub mod bifurcation;
pub mod acceptance;
pub mod cli;

pub use error::{Error, Result};
