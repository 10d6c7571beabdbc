//! Server bandwidth allocation across content-distribution swarms: a fluid swarm simulator,
//! a measured performance model ("cheat sheet"), allocation controllers and an experiment
//! harness.

pub mod cheatsheet;
pub mod controllers;
pub mod error;
pub mod fit;
pub mod harness;
pub mod scalar;
pub mod seed;
pub mod solver;
pub mod swarmsim;
pub mod units;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar used by the concrete aliases below.
pub type Real = f64;
pub type FittedLine = fit::FittedLine<Real>;
pub type CheatSheet = cheatsheet::CheatSheet<Real>;
pub type ConcaveCurve = fit::ConcavePiecewiseLinear<Real>;
