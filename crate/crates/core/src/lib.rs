//! Adaptive sampling with a mobile sensor network: a Gaussian-process field
//! model, unicycle robots confined to shrunken Voronoi cells, and two
//! consensus-ADMM trajectory optimizers.

pub mod admm;
pub mod checks;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod qp;
pub mod sim;
pub mod vehicle;

pub use error::{Error, Result};
