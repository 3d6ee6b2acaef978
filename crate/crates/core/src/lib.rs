//! Dual ascent for constrained learning, with an exact convex reference and
//! executable near-optimality / near-feasibility certificates.

pub mod certificates;
pub mod dual;
pub mod error;
pub mod harness;
pub mod models;
pub mod problem;
pub mod unparam;

pub use error::{Error, Result};
