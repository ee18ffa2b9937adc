//! Effective conductivity of doubly periodic two-phase composites with
//! temperature-dependent phases, via the Kirchhoff transform and a
//! quasi-periodic multipole solver on the unit cell.

pub mod averaging;
pub mod bounds;
pub mod cell_solver;
pub mod conductivity;
pub mod geometry;
pub mod lattice;
pub mod oracle;
pub(crate) mod pchip;
pub mod reconstruction;
