//! Synthetic ground truth.
//!
//! Two families are supported: `X* = U V^T` with i.i.d. standard normal
//! factors, and a "ratings" family where uniform `[0, 1]` factors are
//! multiplied and the product is mapped affinely onto `[1, 5]`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenseMatrix, FactorPair};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianFactors,
    UniformRescaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataGenSpec {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub family: Family,
    pub seed: u64,
}

impl DataGenSpec {
    fn validate(&self, family: Family) -> Result<()> {
        if self.family != family {
            return Err(Error::InvalidArgument(format!(
                "expected family {family:?}, got {:?}",
                self.family
            )));
        }
        if self.m == 0 || self.n == 0 || self.r == 0 || self.r > self.m.min(self.n) {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= r <= min(m, n), got m={} n={} r={}",
                self.m, self.n, self.r
            )));
        }
        Ok(())
    }
}

/// Ground truth plus the factors that produced it.
///
/// For the ratings family `factors` are the uniform factors before the
/// affine rescale, so `factors.product()` differs from `matrix`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub matrix: DenseMatrix,
    pub factors: FactorPair,
}

fn fill(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    mut draw: impl FnMut(&mut Rng) -> f64,
) -> DenseMatrix {
    // column-major fill order
    DMatrix::from_fn(rows, cols, |_, _| draw(rng))
}

pub fn generate_gaussian_lowrank(spec: &DataGenSpec) -> Result<GroundTruth> {
    spec.validate(Family::GaussianFactors)?;
    let mut rng = rng::seeded(spec.seed);
    let u = fill(&mut rng, spec.m, spec.r, |g| g.sample(StandardNormal));
    let v = fill(&mut rng, spec.n, spec.r, |g| g.sample(StandardNormal));
    let factors = FactorPair::new(u, v)?;
    Ok(GroundTruth {
        matrix: factors.product(),
        factors,
    })
}

pub fn generate_ratings_matrix(spec: &DataGenSpec) -> Result<GroundTruth> {
    spec.validate(Family::UniformRescaled)?;
    let mut rng = rng::seeded(spec.seed);
    let u = fill(&mut rng, spec.m, spec.r, |g| g.random::<f64>());
    let v = fill(&mut rng, spec.n, spec.r, |g| g.random::<f64>());
    let factors = FactorPair::new(u, v)?;
    let p = factors.product();
    let lo = p.min();
    let hi = p.max();
    if !(hi > lo) {
        return Err(Error::Degenerate(
            "constant factor product cannot be rescaled onto [1, 5]".into(),
        ));
    }
    let span = hi - lo;
    let matrix = p.map(|x| 1.0 + 4.0 * ((x - lo) / span));
    Ok(GroundTruth { matrix, factors })
}

pub fn generate(spec: &DataGenSpec) -> Result<GroundTruth> {
    match spec.family {
        Family::GaussianFactors => generate_gaussian_lowrank(spec),
        Family::UniformRescaled => generate_ratings_matrix(spec),
    }
}
