//! Patch-reconstructed interior penalty DG solver for distributed elliptic
//! optimal control on axis-aligned rectangles.
//!
//! The discretization carries one unknown per element: piecewise-constant
//! data is lifted to piecewise polynomials by a patchwise least-squares
//! reconstruction, and the lifted space is discretized with a symmetric
//! interior penalty method. On top of the elliptic solver sits a projected
//! gradient loop for control-constrained tracking problems, with a priori
//! convergence studies, residual error indicators, and gradient recovery.

pub mod cli;
pub mod estimators;
pub mod harness;
pub mod ipdg;
pub mod mesh;
pub mod ocp;
pub mod quad;
pub mod recon;
pub mod sparse;

pub use mesh::{Rect, TriMesh};
