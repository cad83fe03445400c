//! Experiment orchestration: single trials, sweeps and file-based solves.

mod config;
pub mod io;
mod sweep;
mod trial;


pub use config::{merged_solver_config, AxisPoint, ExperimentConfig, SweepAxis};
pub use io::{solve_file, SolveSummary};
pub use sweep::{
    cell_seed, prepare_output_dir, run_sweep, run_sweep_to_dir, write_aggregates_csv,
    write_trials_csv, SweepOutput, AGGREGATES_FILE, AGGREGATE_HEADER, TRIALS_FILE, TRIAL_HEADER,
};
pub use trial::{build_problem, run_trial, solve_problem, Problem, RatingsRank, TrialOptions};
