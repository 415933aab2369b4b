//! Sparse linear algebra: CSR storage, Krylov solvers and an aggregation
//! multigrid preconditioner for structured grids.

mod csr;
mod krylov;
mod multigrid;
pub mod tridiag;

pub use csr::{dot, norm2, Csr, CsrBuilder};
pub use krylov::{solve, Method, Precond, SolveStats, SolverOptions};
pub use multigrid::{Multigrid, MultigridOptions};
