use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{aggregate, AggregateRecord, TrialRecord};
use crate::rng;
use crate::sampling::Scheme;

use super::config::{AxisPoint, ExperimentConfig};
use super::trial::{build_problem, failed_record, solve_problem};

pub const TRIALS_FILE: &str = "trials.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";

pub const TRIAL_HEADER: [&str; 13] = [
    "scheme",
    "solver",
    "m",
    "n",
    "r",
    "trial",
    "seed",
    "observed_fraction",
    "nrmse",
    "log_nrmse",
    "success",
    "outer_iterations",
    "runtime_ms",
];

pub const AGGREGATE_HEADER: [&str; 9] = [
    "scheme",
    "solver",
    "m",
    "n",
    "r",
    "trial_count",
    "median_log_nrmse",
    "mean_log_nrmse",
    "success_rate",
];

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// Sorted by `(scheme, solver, m, n, r, trial)`.
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

/// Seed for the data and mask of one cell. The solver is deliberately not
/// part of it: all solvers of a cell see the same `X*` and `Ω`.
pub fn cell_seed(base: u64, scheme: Scheme, point: AxisPoint, trial: usize) -> u64 {
    rng::derive_seed(
        base,
        &[
            rng::tag(scheme.name()),
            point.m as u64,
            point.n as u64,
            point.r as u64,
            trial as u64,
        ],
    )
}

/// Runs every `(point, scheme, trial)` cell with every configured solver.
/// `workers = 0` uses all available cores. Results do not depend on the
/// worker count.
pub fn run_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepOutput> {
    cfg.validate()?;
    let solvers = cfg.solver_configs()?;
    let mut cells = Vec::new();
    for point in cfg.points()? {
        for &scheme in &cfg.schemes {
            for trial in 0..cfg.trials_for(scheme) {
                cells.push((point, scheme, trial));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut records: Vec<TrialRecord> = pool.install(|| {
        cells
            .par_iter()
            .flat_map_iter(|&(p, scheme, trial)| {
                let seed = cell_seed(cfg.base_seed, scheme, p, trial);
                let problem = build_problem(scheme, p.m, p.n, p.r, seed, &cfg.options);
                solvers
                    .iter()
                    .map(|solver| match &problem {
                        Ok(problem) => solve_problem(problem, scheme, solver, p.r, trial, seed),
                        Err(e) => failed_record(
                            scheme,
                            solver,
                            (p.m, p.n, p.r),
                            trial,
                            seed,
                            e.to_string(),
                        ),
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    });
    records.sort_by_key(|rec| (rec.key(), rec.trial));
    let aggregates = aggregate(&records);
    Ok(SweepOutput {
        records,
        aggregates,
    })
}

fn float(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v:?}")
}

pub fn write_trials_csv<W: std::io::Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_HEADER).map_err(csv_error)?;
    for r in records {
        w.write_record([
            r.scheme.name().to_string(),
            r.solver.name().to_string(),
            r.m.to_string(),
            r.n.to_string(),
            r.r.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            float(r.observed_fraction),
            float(r.nrmse),
            float(r.log_nrmse),
            r.success.to_string(),
            r.outer_iterations.to_string(),
            format!("{:.3}", r.runtime_ms),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregates_csv<W: std::io::Write>(out: W, rows: &[AggregateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER).map_err(csv_error)?;
    for a in rows {
        let k = a.key;
        w.write_record([
            k.scheme.name().to_string(),
            k.solver.name().to_string(),
            k.m.to_string(),
            k.n.to_string(),
            k.r.to_string(),
            a.trial_count.to_string(),
            float(a.median_log_nrmse),
            float(a.mean_log_nrmse),
            float(a.success_rate),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Creates `dir` and checks that both result files can be written there.
pub fn prepare_output_dir(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let trials = dir.join(TRIALS_FILE);
    let aggregates = dir.join(AGGREGATES_FILE);
    for path in [&trials, &aggregates] {
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
    }
    Ok((trials, aggregates))
}

/// Validates the output location, runs the sweep, then writes
/// `trials.csv` and `aggregates.csv` into `dir`.
pub fn run_sweep_to_dir(cfg: &ExperimentConfig, dir: &Path, workers: usize) -> Result<SweepOutput> {
    cfg.validate()?;
    let (trials_path, aggregates_path) = prepare_output_dir(dir)?;
    let out = run_sweep(cfg, workers)?;
    write_trials_csv(fs::File::create(trials_path)?, &out.records)?;
    write_aggregates_csv(fs::File::create(aggregates_path)?, &out.aggregates)?;
    Ok(out)
}
