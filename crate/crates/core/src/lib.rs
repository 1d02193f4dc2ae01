//! Linear-quadratic mean-field cap-and-trade model: Riccati solver, common-noise
//! Monte Carlo simulator and market-clearing diagnostics.

pub mod carbon;
pub mod error;
pub mod experiment;
mod linalg;
pub mod lq_problem;
pub mod market;
pub mod riccati;
pub mod simulator;

pub use error::{Error, Result};
