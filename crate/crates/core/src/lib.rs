//! Numerical laboratory for k-Hessian equations `S_k(D²u) = f` on convex
//! rings and exterior domains, with level-set convexity diagnostics.

pub mod error;
pub mod field;
pub mod geometry;
pub mod lab;
pub mod levelset;
pub mod linsolve;
pub mod profiles;
pub mod quadrature;
pub mod solver;
pub mod symcore;

pub use error::{LabError, Result};
pub use symcore::SymSpec;
