use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{generate, DataGenSpec, Family};
use crate::error::Result;
use crate::eval::{classify, log_nrmse, nrmse, TrialRecord};
use crate::model::{DenseMatrix, ObservationSet};
use crate::rng;
use crate::sampling::{
    build_mask, Centering, GroupProbabilities, SamplingSpec, Scheme, UniformMode,
};
use crate::solvers::{solve, SolverConfig};

/// Rank handed to the solvers for the ratings family, whose affine rescale
/// adds a rank-one shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingsRank {
    /// `r + 1`.
    #[default]
    Shifted,
    /// `r`.
    Nominal,
}

/// Data and mask settings shared by every trial of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialOptions {
    pub target_fraction: f64,
    /// Overrides the scheme's default data family (ratings for
    /// group-specific, Gaussian otherwise).
    pub family: Option<Family>,
    pub ratings_rank: RatingsRank,
    pub centering: Centering,
    pub gs_probabilities: GroupProbabilities,
    /// Switches uniform sampling to Bernoulli draws with this oversampling
    /// ratio.
    pub uniform_oversampling: Option<f64>,
    /// Gives uniform masks the cardinality a group-specific mask draws on
    /// the same matrix, for paired comparisons on ratings data.
    pub match_group_specific: bool,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            target_fraction: 0.5,
            family: None,
            ratings_rank: RatingsRank::Shifted,
            centering: Centering::Zero,
            gs_probabilities: GroupProbabilities::default(),
            uniform_oversampling: None,
            match_group_specific: false,
        }
    }
}

impl TrialOptions {
    pub fn family_for(&self, scheme: Scheme) -> Family {
        self.family.unwrap_or(match scheme {
            Scheme::GroupSpecific => Family::UniformRescaled,
            _ => Family::GaussianFactors,
        })
    }

    pub fn solver_rank(&self, family: Family, r: usize, m: usize, n: usize) -> usize {
        match (family, self.ratings_rank) {
            (Family::UniformRescaled, RatingsRank::Shifted) => (r + 1).min(m.min(n)),
            _ => r,
        }
    }

    fn sampling_spec(&self, scheme: Scheme, seed: u64, r: usize) -> SamplingSpec {
        SamplingSpec {
            scheme,
            seed,
            target_fraction: self.target_fraction,
            gs_probabilities: self.gs_probabilities,
            centering: self.centering,
            uniform_mode: match self.uniform_oversampling {
                Some(oversampling) => UniformMode::Bernoulli {
                    oversampling,
                    rank: r,
                },
                None => UniformMode::FixedCount,
            },
        }
    }
}

/// One synthetic completion problem: ground truth plus its mask.
#[derive(Debug, Clone)]
pub struct Problem {
    pub truth: DenseMatrix,
    pub omega: ObservationSet,
    pub family: Family,
    /// Rank passed to rank-constrained solvers.
    pub solver_rank: usize,
}

/// Builds the problem for a data seed. The mask seed is derived from it, so
/// the pair is shared by every solver run on the same cell.
pub fn build_problem(
    scheme: Scheme,
    m: usize,
    n: usize,
    r: usize,
    seed: u64,
    opts: &TrialOptions,
) -> Result<Problem> {
    let family = opts.family_for(scheme);
    let truth = generate(&DataGenSpec {
        m,
        n,
        r,
        family,
        seed,
    })?
    .matrix;
    let mask_seed = rng::derive_seed(seed, &[rng::tag("mask")]);
    let mut spec = opts.sampling_spec(scheme, mask_seed, r);
    if scheme == Scheme::Uniform && opts.match_group_specific {
        let gs_seed = rng::derive_seed(seed, &[rng::tag("paired-mask")]);
        let reference = build_mask(
            &truth,
            &opts.sampling_spec(Scheme::GroupSpecific, gs_seed, r),
        )?;
        spec.uniform_mode = UniformMode::FixedCount;
        spec.target_fraction = reference.fraction();
    }
    let omega = build_mask(&truth, &spec)?;
    Ok(Problem {
        truth,
        omega,
        family,
        solver_rank: opts.solver_rank(family, r, m, n),
    })
}

pub fn solve_problem(
    problem: &Problem,
    scheme: Scheme,
    solver: &SolverConfig,
    r: usize,
    trial: usize,
    seed: u64,
) -> TrialRecord {
    let (m, n) = problem.truth.shape();
    let start = Instant::now();
    let outcome = solve(solver, &problem.omega, problem.solver_rank)
        .and_then(|rep| Ok((nrmse(&rep.estimate, &problem.truth)?, rep.outer_iterations)));
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let (err, iterations, error) = match outcome {
        Ok((e, it)) if e.is_finite() => (e, it, None),
        Ok((_, it)) => (f64::INFINITY, it, Some("non-finite estimate".to_string())),
        Err(e) => (f64::INFINITY, 0, Some(e.to_string())),
    };
    TrialRecord {
        scheme,
        solver: solver.kind(),
        m,
        n,
        r,
        trial,
        seed,
        observed_fraction: problem.omega.fraction(),
        nrmse: err,
        log_nrmse: log_nrmse(err),
        success: classify(err),
        outer_iterations: iterations,
        runtime_ms,
        error,
    }
}

pub(crate) fn failed_record(
    scheme: Scheme,
    solver: &SolverConfig,
    (m, n, r): (usize, usize, usize),
    trial: usize,
    seed: u64,
    message: String,
) -> TrialRecord {
    TrialRecord {
        scheme,
        solver: solver.kind(),
        m,
        n,
        r,
        trial,
        seed,
        observed_fraction: 0.0,
        nrmse: f64::INFINITY,
        log_nrmse: f64::INFINITY,
        success: false,
        outer_iterations: 0,
        runtime_ms: 0.0,
        error: Some(message),
    }
}

/// Generates `X*`, builds Ω, runs the solver and scores the estimate. Any
/// error along the way becomes a failed record with `nrmse = inf`.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    scheme: Scheme,
    solver: &SolverConfig,
    m: usize,
    n: usize,
    r: usize,
    trial: usize,
    seed: u64,
    opts: &TrialOptions,
) -> TrialRecord {
    match build_problem(scheme, m, n, r, seed, opts) {
        Ok(problem) => solve_problem(&problem, scheme, solver, r, trial, seed),
        Err(e) => failed_record(scheme, solver, (m, n, r), trial, seed, e.to_string()),
    }
}
