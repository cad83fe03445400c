//! Recovery metrics and per-configuration aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DenseMatrix;
use crate::sampling::Scheme;
use crate::solvers::SolverKind;

/// NRMSE below this counts as a successful recovery.
pub const SUCCESS_THRESHOLD: f64 = 1e-4;

/// `log_nrmse` reported for an exact (zero-error) recovery.
pub const LOG_NRMSE_FLOOR: f64 = -16.0;

/// `||X_hat - X*||_F / ||X*||_F`.
pub fn nrmse(estimate: &DenseMatrix, truth: &DenseMatrix) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape(),
            actual: estimate.shape(),
        });
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::Degenerate("ground truth is the zero matrix".into()));
    }
    Ok((estimate - truth).norm() / denom)
}

pub fn log_nrmse(nrmse: f64) -> f64 {
    if nrmse == 0.0 {
        LOG_NRMSE_FLOOR
    } else {
        nrmse.log10()
    }
}

pub fn classify(nrmse: f64) -> bool {
    nrmse < SUCCESS_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scheme: Scheme,
    pub solver: SolverKind,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub trial: usize,
    pub seed: u64,
    pub observed_fraction: f64,
    pub nrmse: f64,
    pub log_nrmse: f64,
    pub success: bool,
    pub outer_iterations: usize,
    pub runtime_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn key(&self) -> GroupKey {
        GroupKey {
            scheme: self.scheme,
            solver: self.solver,
            m: self.m,
            n: self.n,
            r: self.r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub scheme: Scheme,
    pub solver: SolverKind,
    pub m: usize,
    pub n: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    #[serde(flatten)]
    pub key: GroupKey,
    pub trial_count: usize,
    pub median_log_nrmse: f64,
    pub mean_log_nrmse: f64,
    pub success_rate: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Groups by `(scheme, solver, m, n, r)`, sorted by that key. Statistics
/// of `log_nrmse` use the finite values only; `success_rate` counts every
/// trial.
pub fn aggregate(records: &[TrialRecord]) -> Vec<AggregateRecord> {
    let mut groups: BTreeMap<GroupKey, Vec<&TrialRecord>> = BTreeMap::new();
    for rec in records {
        groups.entry(rec.key()).or_default().push(rec);
    }
    groups
        .into_iter()
        .map(|(key, recs)| {
            let mut logs: Vec<f64> = recs
                .iter()
                .map(|r| r.log_nrmse)
                .filter(|v| v.is_finite())
                .collect();
            logs.sort_by(f64::total_cmp);
            let mean = if logs.is_empty() {
                f64::NAN
            } else {
                logs.iter().sum::<f64>() / logs.len() as f64
            };
            AggregateRecord {
                key,
                trial_count: recs.len(),
                median_log_nrmse: median(&logs),
                mean_log_nrmse: mean,
                success_rate: recs.iter().filter(|r| r.success).count() as f64 / recs.len() as f64,
            }
        })
        .collect()
}
