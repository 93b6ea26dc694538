//! Simulation scenarios, calibration, true values and the Monte Carlo harness.

pub mod calibrate;
pub mod mc;
pub mod scenario;
pub mod truth;

pub use calibrate::{
    calibrate_gamma_b, calibrate_gamma_b_checked, calibrate_gamma_d, gamma_b_correction,
    gamma_b_correction_mc, recovered_gamma, CalibrationRecord,
};
pub use mc::{run_mc, run_replicate, Estimand, McOptions, McSummary, ReplicateOutcome, SummaryRow};
pub use scenario::{generate, Scenario, ScenarioSpec};
pub use truth::{true_mu0, truth, Truth, TruthOptions};
