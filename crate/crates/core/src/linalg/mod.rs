//! Sparse storage and the preconditioned conjugate gradient solver.

mod csr;
mod pcg;

pub use csr::SparseOperator;
pub use pcg::{pcg_solve, pcg_solve_from, PcgConfig, PcgOutput, Preconditioner};
