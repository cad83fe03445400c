//! Completion solvers.
//!
//! Two solve the nuclear-norm regularized problem
//! `min mu ||X||_* + 1/2 ||P_Ω(X) - b||^2` by proximal gradient
//! ([`fpca_solve`], [`nnls_solve`]); two work on an explicit rank-`r`
//! factorization with Gauss-Newton style least-squares subproblems
//! ([`r2rils_solve`], [`gnmr_solve`]).
//!
//! Default parameters are the published demo settings of each method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObservationSet, SolverReport};

mod factor;
mod shrinkage;

pub use factor::{
    column_normalize, gnmr_solve, orthonormalize, r2rils_average, r2rils_solve, rebalance,
    spectral_init, GnmrParams, GnmrVariant, R2rilsParams,
};
pub use shrinkage::{
    fpca_solve, nnls_solve, nuclear_norm, prox_gradient_step, regularized_objective, svt,
    Continuation, ShrinkageParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Fpca,
    Nnls,
    R2rils,
    Gnmr,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::Fpca,
        SolverKind::Nnls,
        SolverKind::R2rils,
        SolverKind::Gnmr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Fpca => "fpca",
            SolverKind::Nnls => "nnls",
            SolverKind::R2rils => "r2rils",
            SolverKind::Gnmr => "gnmr",
        }
    }

    pub fn default_config(self) -> SolverConfig {
        match self {
            SolverKind::Fpca => SolverConfig::Fpca(ShrinkageParams::fpca()),
            SolverKind::Nnls => SolverConfig::Nnls(ShrinkageParams::nnls()),
            SolverKind::R2rils => SolverConfig::R2rils(R2rilsParams::default()),
            SolverKind::Gnmr => SolverConfig::Gnmr(GnmrParams::default()),
        }
    }

    /// Whether the solver takes the target rank as an input.
    pub fn is_rank_constrained(self) -> bool {
        matches!(self, SolverKind::R2rils | SolverKind::Gnmr)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown solver '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "solver", content = "params")]
pub enum SolverConfig {
    Fpca(ShrinkageParams),
    Nnls(ShrinkageParams),
    R2rils(R2rilsParams),
    Gnmr(GnmrParams),
}

impl SolverConfig {
    pub fn kind(&self) -> SolverKind {
        match self {
            SolverConfig::Fpca(_) => SolverKind::Fpca,
            SolverConfig::Nnls(_) => SolverKind::Nnls,
            SolverConfig::R2rils(_) => SolverKind::R2rils,
            SolverConfig::Gnmr(_) => SolverKind::Gnmr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SolverConfig::Fpca(p) | SolverConfig::Nnls(p) => p.validate(),
            SolverConfig::R2rils(p) => p.validate(),
            SolverConfig::Gnmr(p) => p.validate(),
        }
    }
}

/// Runs the configured solver. `rank` is ignored by the nuclear-norm
/// solvers.
pub fn solve(cfg: &SolverConfig, omega: &ObservationSet, rank: usize) -> Result<SolverReport> {
    match cfg {
        SolverConfig::Fpca(p) => fpca_solve(omega, p),
        SolverConfig::Nnls(p) => nnls_solve(omega, p),
        SolverConfig::R2rils(p) => r2rils_solve(omega, rank, p),
        SolverConfig::Gnmr(p) => gnmr_solve(omega, rank, p),
    }
}

pub(crate) fn check_sampling(omega: &ObservationSet, rank: usize) -> Result<()> {
    let (m, n) = omega.shape();
    if rank == 0 || rank > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} outside 1..={}",
            m.min(n)
        )));
    }
    let dof = rank * (m + n - rank);
    if omega.len() < dof {
        return Err(Error::Undersampled {
            observed: omega.len(),
            required: dof,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_roundtrip() {
        for k in SolverKind::ALL {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
            assert_eq!(k.default_config().kind(), k);
            k.default_config().validate().unwrap();
        }
        assert!("cvx".parse::<SolverKind>().is_err());
    }

    #[test]
    fn config_serde_shape() {
        let cfg = SolverKind::Gnmr.default_config();
        let json = serde_json::to_value(cfg).unwrap();
        assert_eq!(json["solver"], "gnmr");
        let back: SolverConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, cfg);
    }
}
