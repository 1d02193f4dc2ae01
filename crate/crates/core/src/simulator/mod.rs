//! Euler–Maruyama simulation of the controlled dynamics under common noise.
//!
//! Each common path carries its own conditional-mean state, integrated from the
//! closed-form mean dynamics; particles are simulated around it.

mod adjoint;
mod cost;
mod engine;
mod estimate;
mod noise;
mod stats;

pub use adjoint::{reconstruct_z, AdjointDiffusions};
pub use cost::{
    estimate_cost, firm_costs, poa_factor, price_of_anarchy, summarize, trapezoid_weight, FirmTotals, ScenarioSummary,
    SummaryObserver,
};
pub use engine::{
    reconstruct_adjoint, simulate_ensemble, simulate_mean_path, simulate_particles, ClosedLoop, CommonPath, MeanPath, NodeView,
    Observer, ParticlePaths, PathEnsemble, SimConfig,
};
pub use estimate::Estimate;
pub use noise::{CommonIncrements, Increments, NoiseBundle, NoiseSource, MAX_CHANNELS};
pub use stats::{EnsembleStats, EnsembleSummary, COLUMNS};
