//! MR-MTT simulation: robot teams run a search strategy over a shared
//! PHD belief grid, sensing static targets and logging OSPA and exploration
//! inefficiency traces per trial.

mod config;
mod phd;
mod search;
mod trial;

pub use config::{
    AcoParams, AisParams, PsoParams, SaParams, SearchAlgorithm, SimConfig, SimError,
};
pub use phd::{estimate_targets, fov_cells, phd_step, PhdGrid, SensorSweep};
pub use search::step_search;
pub use trial::{
    config_digest, expand_grid, run_grid, run_grid_with_progress, run_trial, run_trial_observed,
    sense, spawn_world, ExperimentGrid, GridOutcome, TrialFailure, TrialRecord, WorldState,
};
