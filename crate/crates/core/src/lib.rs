//! Simulation and verification toolkit for Levy trees.

pub mod coded_tree;
pub mod error;
pub mod fractal;
pub mod galton_watson;
pub mod levy_sampler;
pub mod mechanism;
pub mod metric;
pub mod parallel;
pub mod quad;
pub mod rmq;
pub mod rng;
pub mod spatial;
pub mod stattests;

pub use error::{Error, Result};
