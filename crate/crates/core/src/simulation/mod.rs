//! Simulation scenarios: true densities, samplers and replicate drivers.

pub mod scenario;
pub mod truth;

pub use scenario::{check_failure_rate, run_replicate, run_scenario, Estimator, Scenario, ScenarioId, TableRow};
pub use truth::{derive_seed, sample_density, Truth};
