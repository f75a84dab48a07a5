//! The book chapters, mounted as module documentation so that
//! `cargo test --doc` compiles and runs every code block in `book/src`.
//! The rendered book and the doc-tests share the same markdown files;
//! a snippet that breaks against the library fails the test suite.

#[doc = include_str!("../../../book/src/ch01-overview.md")]
pub mod ch01_overview {}

#[doc = include_str!("../../../book/src/ch02-meshes-and-quadrature.md")]
pub mod ch02_meshes_and_quadrature {}

#[doc = include_str!("../../../book/src/ch03-patch-reconstruction.md")]
pub mod ch03_patch_reconstruction {}

#[doc = include_str!("../../../book/src/ch04-elliptic-solver.md")]
pub mod ch04_elliptic_solver {}

#[doc = include_str!("../../../book/src/ch05-control-problems.md")]
pub mod ch05_control_problems {}

#[doc = include_str!("../../../book/src/ch06-error-indicators.md")]
pub mod ch06_error_indicators {}

#[doc = include_str!("../../../book/src/ch07-studies-and-cli.md")]
pub mod ch07_studies_and_cli {}
