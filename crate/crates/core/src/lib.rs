//! Discrete solvers for elliptic quasi-variational inequalities on the unit
//! interval: operators, obstacle maps, inner obstacle solvers, outer
//! fixed-point iterations and convergence studies.

pub mod cli;
pub mod error;
pub mod grid;
pub mod obstacle;
pub mod operators;
pub mod problems;
pub mod qvi_solver;
pub mod studies;
mod tridiag;
pub mod vi_solver;

pub use error::{Error, Result};
