//! Quantum-classical hybrid optimal power flow.
//!
//! An interior point method for DC and compact-AC optimal power flow whose
//! Newton-direction linear systems are solved either classically or by a
//! (coherent) variational quantum linear solver running on a built-in dense
//! statevector simulator. Includes Pauli-decomposition encoding, parametric
//! noise injection, classical optimizers for the variational loop, and
//! conditioning / resource analysis utilities.

pub mod caseio;
pub mod error;
pub mod ipm;
pub mod noise;
pub mod optimize;
pub mod pauli;
pub mod powermodel;
pub mod qsim;
pub mod vqsolver;

pub use caseio::{builtin_case, parse_matpower, CaseData, RunReport};
pub use error::{Error, Result};
pub use ipm::{ipm_solve, IpmConfig, IpmResult, IpmState, LinearBackend};
pub use powermodel::{build_opf, Formulation, OpfProblem};
pub use vqsolver::{solve_linear_system, SolveReport, SolverConfig};
