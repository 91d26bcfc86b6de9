//! Doctest wrapper for the guide. Each chapter is included as a doc comment,
//! so `cargo test -p book-snippets` runs every Rust block in it.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/gp-field.md")]
pub mod gp_field {}

#[doc = include_str!("../../../book/src/vehicle.md")]
pub mod vehicle {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/qp-core.md")]
pub mod qp_core {}

#[doc = include_str!("../../../book/src/solvers.md")]
pub mod solvers {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
