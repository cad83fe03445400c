use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sampling::Scheme;
use crate::solvers::{SolverConfig, SolverKind};

use super::trial::TrialOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Vary `r` at fixed `m` and `n`.
    Rank,
    /// Vary the side of a square matrix (`m = n`) at fixed `r`.
    Dimension,
}

/// A sweep definition, read from JSON. Unknown keys are rejected.
///
/// ```json
/// {
///   "axis": "rank", "values": [1, 2, 3],
///   "m": 100, "n": 100,
///   "schemes": ["relu", "uniform"], "solvers": ["gnmr", "fpca"],
///   "trials": 20, "base_seed": 7,
///   "overrides": { "gnmr": { "max_outer": 50 } }
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    /// Fixed row count for rank sweeps.
    #[serde(default)]
    pub m: Option<usize>,
    /// Fixed column count for rank sweeps.
    #[serde(default)]
    pub n: Option<usize>,
    /// Fixed rank for dimension sweeps.
    #[serde(default)]
    pub r: Option<usize>,
    pub schemes: Vec<Scheme>,
    pub solvers: Vec<SolverKind>,
    /// Trials per cell. When absent: 20 for group-specific, 50 otherwise.
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub options: TrialOptions,
    /// Partial parameter objects merged over each solver's defaults.
    #[serde(default)]
    pub overrides: BTreeMap<SolverKind, Value>,
    /// Output directory; the command line takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// One `(m, n, r)` point of the sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisPoint {
    pub m: usize,
    pub n: usize,
    pub r: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn trials_for(&self, scheme: Scheme) -> usize {
        self.trials.unwrap_or(match scheme {
            Scheme::GroupSpecific => 20,
            _ => 50,
        })
    }

    pub fn points(&self) -> Result<Vec<AxisPoint>> {
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("{name} is required for this sweep axis")))
        };
        match self.axis {
            SweepAxis::Rank => {
                let (m, n) = (need(self.m, "m")?, need(self.n, "n")?);
                Ok(self.values.iter().map(|&r| AxisPoint { m, n, r }).collect())
            }
            SweepAxis::Dimension => {
                let r = need(self.r, "r")?;
                Ok(self
                    .values
                    .iter()
                    .map(|&d| AxisPoint { m: d, n: d, r })
                    .collect())
            }
        }
    }

    /// Default parameters of `kind` with this config's override applied.
    pub fn solver_config(&self, kind: SolverKind) -> Result<SolverConfig> {
        merged_solver_config(kind, self.overrides.get(&kind))
    }

    pub fn solver_configs(&self) -> Result<Vec<SolverConfig>> {
        self.solvers
            .iter()
            .map(|&k| self.solver_config(k))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("values must not be empty".into()));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("values must be strictly increasing".into()));
        }
        if self.schemes.is_empty() || self.solvers.is_empty() {
            return Err(Error::Config(
                "schemes and solvers must not be empty".into(),
            ));
        }
        if has_duplicates(&self.schemes) || has_duplicates(&self.solvers) {
            return Err(Error::Config("schemes and solvers must be distinct".into()));
        }
        if self.trials == Some(0) {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let stray = match self.axis {
            SweepAxis::Rank => self.r.map(|_| "r"),
            SweepAxis::Dimension => self.m.or(self.n).map(|_| "m/n"),
        };
        if let Some(key) = stray {
            return Err(Error::Config(format!("{key} is set by the sweep axis")));
        }
        for p in self.points()? {
            if p.m == 0 || p.n == 0 || p.r == 0 || p.r > p.m.min(p.n) {
                return Err(Error::Config(format!(
                    "rank {} invalid for a {}x{} matrix",
                    p.r, p.m, p.n
                )));
            }
        }
        if !(self.options.target_fraction > 0.0 && self.options.target_fraction <= 1.0) {
            return Err(Error::Config("target_fraction must lie in (0, 1]".into()));
        }
        for kind in self.overrides.keys() {
            if !self.solvers.contains(kind) {
                return Err(Error::Config(format!("override for unused solver {kind}")));
            }
        }
        self.solver_configs()?;
        Ok(())
    }
}

/// `kind`'s default parameters with the keys of `patch` (a JSON object)
/// replaced. Unknown keys and invalid values are configuration errors.
pub fn merged_solver_config(kind: SolverKind, patch: Option<&Value>) -> Result<SolverConfig> {
    let base = kind.default_config();
    let Some(patch) = patch else {
        return Ok(base);
    };
    let Value::Object(patch) = patch else {
        return Err(Error::Config(format!(
            "override for {kind} must be an object"
        )));
    };
    let mut doc = serde_json::to_value(base)?;
    let params = doc
        .get_mut("params")
        .and_then(Value::as_object_mut)
        .ok_or_else(|| Error::Config("solver parameters are not an object".into()))?;
    for (key, value) in patch {
        params.insert(key.clone(), value.clone());
    }
    let cfg: SolverConfig = serde_json::from_value(doc)
        .map_err(|e| Error::Config(format!("override for {kind}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].contains(a))
}
