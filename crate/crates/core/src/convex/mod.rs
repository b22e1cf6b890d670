//! Convex backend: program description plus two solvers, a primal-dual
//! interior-point method for scalar programs and a barrier method for
//! programs over the unit-diagonal PSD cone.

mod gradcheck;
mod ipm;
mod program;
mod psd;
mod sdp;
mod skyline;

pub use gradcheck::check_gradient;
pub use program::{trace_product, Affine, Constraint, ConvexProgram, HMat, Objective};
pub use psd::{principal_eigen, project_unit_diag_psd};
pub use skyline::Skyline;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas_tol: 1e-7, opt_tol: 1e-6, max_iters: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: Status,
    pub objective: f64,
    pub x: Vec<f64>,
    pub b: Option<HMat>,
    pub max_violation: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Merit trace of the method (residual merit for the interior-point
    /// solver, duality-gap bound for the barrier solver).
    pub merit: Vec<f64>,
}

/// Warm start: scalar values, or the matrix for PSD programs.
#[derive(Debug, Clone)]
pub enum Start<'a> {
    Scalars(&'a [f64]),
    Matrix(&'a HMat),
}

pub fn solve(program: &ConvexProgram, start: Start<'_>, tol: &Tolerances) -> Result<SolveReport> {
    program.validate().map_err(Error::Solver)?;
    if !(tol.feas_tol > 0.0 && tol.opt_tol > 0.0 && tol.max_iters > 0) {
        return Err(Error::Solver("tolerances must be positive".into()));
    }
    match (program.psd_dim, start) {
        (None, Start::Scalars(x)) if x.len() == program.num_vars => {
            ipm::solve(program, x, tol).map_err(Error::Solver)
        }
        (Some(_), Start::Matrix(b)) => sdp::solve(program, b, tol).map_err(Error::Solver),
        _ => Err(Error::Solver("warm start does not match the program".into())),
    }
}
