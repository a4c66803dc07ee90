//! Fixed-confidence best-arm identification in linear bandits.
//!
//! The crate is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the binary uses.

pub mod bench;
pub mod cli;
pub mod complexity;
pub mod design;
pub mod error;
pub mod linalg;
pub mod problem;
pub mod scalar;
pub mod strategies;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Instance = problem::ProblemInstance<f64>;
pub type Mat = linalg::Matrix<f64>;
