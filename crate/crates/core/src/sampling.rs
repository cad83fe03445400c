//! Observation masks.
//!
//! Three of the four schemes look at the values of `X*` when deciding what to
//! reveal:
//!
//! * [`Scheme::Relu`] reveals exactly the nonnegative entries;
//! * [`Scheme::GroupSpecific`] reveals each entry independently, with a high
//!   probability for extreme ratings (`[1, 2] ∪ [4, 5]`) and a low one for
//!   moderate ratings (`(2, 4)`);
//! * [`Scheme::MeanCentric`] reveals the entries of smallest magnitude, with
//!   the cut-off calibrated so a target fraction is observed;
//! * [`Scheme::Uniform`] ignores the values entirely.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenseMatrix, ObservationSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Relu,
    GroupSpecific,
    MeanCentric,
    Uniform,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Relu,
        Scheme::GroupSpecific,
        Scheme::MeanCentric,
        Scheme::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Relu => "relu",
            Scheme::GroupSpecific => "group-specific",
            Scheme::MeanCentric => "mean-centric",
            Scheme::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampling scheme '{s}'")))
    }
}

/// Where magnitude truncation is centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// `|x_ij| <= alpha`.
    #[default]
    Zero,
    /// `|x_ij - mean(X*)| <= alpha`.
    EmpiricalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum UniformMode {
    /// Exactly `floor(target_fraction * m n)` indices without replacement.
    #[default]
    FixedCount,
    /// Independent Bernoulli draws with `p = oversampling * r (m + n - r) / (m n)`.
    Bernoulli { oversampling: f64, rank: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupProbabilities {
    pub extreme: f64,
    pub moderate: f64,
}

impl Default for GroupProbabilities {
    fn default() -> Self {
        Self {
            extreme: 0.8,
            moderate: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub scheme: Scheme,
    pub seed: u64,
    pub target_fraction: f64,
    pub gs_probabilities: GroupProbabilities,
    pub centering: Centering,
    pub uniform_mode: UniformMode,
}

impl SamplingSpec {
    pub fn new(scheme: Scheme, seed: u64) -> Self {
        Self {
            scheme,
            seed,
            target_fraction: 0.5,
            gs_probabilities: GroupProbabilities::default(),
            centering: Centering::Zero,
            uniform_mode: UniformMode::FixedCount,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target fraction {} outside (0, 1]",
                self.target_fraction
            )));
        }
        let p = self.gs_probabilities;
        if !(0.0..=1.0).contains(&p.extreme) || !(0.0..=1.0).contains(&p.moderate) {
            return Err(Error::InvalidArgument(format!(
                "group probabilities {p:?} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

fn row_major(shape: (usize, usize)) -> impl Iterator<Item = (usize, usize)> {
    let (m, n) = shape;
    (0..m).flat_map(move |i| (0..n).map(move |j| (i, j)))
}

/// Observes exactly the entries with `x_ij >= 0`.
pub fn mask_relu(x: &DenseMatrix) -> Result<ObservationSet> {
    let idx: Vec<_> = row_major(x.shape())
        .filter(|&(i, j)| x[(i, j)] >= 0.0)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyObservation);
    }
    ObservationSet::from_matrix(x, idx)
}

fn is_extreme(v: f64) -> bool {
    (1.0..=2.0).contains(&v) || (4.0..=5.0).contains(&v)
}

/// Bernoulli mask with rating-band dependent inclusion probabilities.
/// Entries are visited in row-major order, one uniform draw each.
pub fn mask_group_specific(x: &DenseMatrix, spec: &SamplingSpec) -> Result<ObservationSet> {
    spec.validate()?;
    if let Some(bad) = x.iter().find(|v| !(1.0..=5.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "group-specific sampling needs entries in [1, 5], found {bad}"
        )));
    }
    let probs = spec.gs_probabilities;
    let mut rng = rng::seeded(spec.seed);
    let idx: Vec<_> = row_major(x.shape())
        .filter(|&(i, j)| {
            let p = if is_extreme(x[(i, j)]) {
                probs.extreme
            } else {
                probs.moderate
            };
            rng.random::<f64>() < p
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyObservation);
    }
    ObservationSet::from_matrix(x, idx)
}

fn target_count(total: usize, fraction: f64) -> usize {
    // guard against 0.5 * 10000 landing at 5000.000000000001
    let raw = fraction * total as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, total)
}

fn center_of(x: &DenseMatrix, centering: Centering) -> f64 {
    match centering {
        Centering::Zero => 0.0,
        Centering::EmpiricalMean => x.mean(),
    }
}

/// Entries ordered by distance to `center`, ties broken lexicographically.
fn magnitude_order(x: &DenseMatrix, center: f64) -> Vec<(f64, (usize, usize))> {
    let mut keyed: Vec<_> = row_major(x.shape())
        .map(|(i, j)| ((x[(i, j)] - center).abs(), (i, j)))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed
}

/// The `ceil(target * m n)`-th smallest `|x_ij|`.
pub fn calibrate_alpha(x: &DenseMatrix, target_fraction: f64) -> Result<f64> {
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target fraction {target_fraction} outside (0, 1]"
        )));
    }
    let k = target_count(x.len(), target_fraction);
    Ok(magnitude_order(x, 0.0)[k - 1].0)
}

/// Observes the `ceil(target * m n)` entries closest to the centre. With
/// distinct magnitudes this is exactly `{(i, j) : |x_ij - c| <= alpha}`.
pub fn mask_mean_centric(x: &DenseMatrix, spec: &SamplingSpec) -> Result<ObservationSet> {
    spec.validate()?;
    let k = target_count(x.len(), spec.target_fraction);
    let center = center_of(x, spec.centering);
    let idx = magnitude_order(x, center)
        .into_iter()
        .take(k)
        .map(|(_, ij)| ij)
        .collect();
    ObservationSet::from_matrix(x, idx)
}

/// Index set for uniform sampling. Depends only on the shape and the seed.
pub fn uniform_indices(shape: (usize, usize), spec: &SamplingSpec) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    let (m, n) = shape;
    let total = m * n;
    let mut rng = rng::seeded(spec.seed);
    let mut idx: Vec<(usize, usize)> = match spec.uniform_mode {
        UniformMode::FixedCount => {
            let k = ((spec.target_fraction * total as f64) + 1e-9).floor() as usize;
            rand::seq::index::sample(&mut rng, total, k.min(total))
                .into_iter()
                .map(|flat| (flat / n, flat % n))
                .collect()
        }
        UniformMode::Bernoulli { oversampling, rank } => {
            if rank == 0 || rank > m.min(n) || !(oversampling > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "bernoulli sampling needs 1 <= rank <= {} and oversampling > 0",
                    m.min(n)
                )));
            }
            let dof = rank * (m + n - rank);
            let p = (oversampling * dof as f64 / total as f64).min(1.0);
            row_major(shape)
                .filter(|_| rng.random::<f64>() < p)
                .collect()
        }
    };
    if idx.is_empty() {
        return Err(Error::EmptyObservation);
    }
    idx.sort_unstable();
    Ok(idx)
}

pub fn mask_uniform(x: &DenseMatrix, spec: &SamplingSpec) -> Result<ObservationSet> {
    let idx = uniform_indices(x.shape(), spec)?;
    ObservationSet::from_matrix(x, idx)
}

/// Builds Ω for `x` under `spec.scheme`.
pub fn build_mask(x: &DenseMatrix, spec: &SamplingSpec) -> Result<ObservationSet> {
    match spec.scheme {
        Scheme::Relu => mask_relu(x),
        Scheme::GroupSpecific => mask_group_specific(x, spec),
        Scheme::MeanCentric => mask_mean_centric(x, spec),
        Scheme::Uniform => mask_uniform(x, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DataGenSpec, Family};

    fn gaussian(m: usize, n: usize, r: usize, seed: u64) -> DenseMatrix {
        generate(&DataGenSpec {
            m,
            n,
            r,
            family: Family::GaussianFactors,
            seed,
        })
        .unwrap()
        .matrix
    }

    #[test]
    fn relu_sign_rule() {
        let x = DenseMatrix::from_row_slice(2, 2, &[1.0, -2.0, -3.0, 4.0]);
        let o = mask_relu(&x).unwrap();
        assert_eq!(o.indices(), &[(0, 0), (1, 1)]);
        assert_eq!(o.values(), &[1.0, 4.0]);

        let pos = DenseMatrix::from_element(3, 2, 0.5);
        assert_eq!(mask_relu(&pos).unwrap().len(), 6);

        let neg = DenseMatrix::from_element(2, 2, -1.0);
        assert!(matches!(mask_relu(&neg), Err(Error::EmptyObservation)));
    }

    #[test]
    fn relu_observes_about_half_of_gaussian_products() {
        let mean = (0..50)
            .map(|s| mask_relu(&gaussian(200, 200, 5, s)).unwrap().fraction())
            .sum::<f64>()
            / 50.0;
        assert!((mean - 0.5).abs() <= 0.03, "{mean}");
    }

    #[test]
    fn relu_partition_is_exact() {
        let x = gaussian(40, 30, 3, 8);
        let o = mask_relu(&x).unwrap();
        assert!(o.values().iter().all(|&v| v >= 0.0));
        for i in 0..40 {
            for j in 0..30 {
                if !o.contains(i, j) {
                    assert!(x[(i, j)] < 0.0);
                }
            }
        }
    }

    #[test]
    fn group_specific_rates() {
        for (value, expect) in [(1.5, 0.8), (3.0, 0.2)] {
            let x = DenseMatrix::from_element(50, 50, value);
            let mean = (0..100)
                .map(|s| {
                    mask_group_specific(&x, &SamplingSpec::new(Scheme::GroupSpecific, s))
                        .unwrap()
                        .fraction()
                })
                .sum::<f64>()
                / 100.0;
            assert!((mean - expect).abs() <= 0.02, "{value}: {mean}");
        }
    }

    #[test]
    fn group_specific_band_edges() {
        assert!(is_extreme(1.0) && is_extreme(2.0) && is_extreme(4.0) && is_extreme(5.0));
        assert!(!is_extreme(2.0000001) && !is_extreme(3.9999999));
    }

    #[test]
    fn group_specific_deterministic_and_range_checked() {
        let x = DenseMatrix::from_fn(20, 20, |i, j| 1.0 + ((i * 20 + j) % 5) as f64 * 0.99);
        let spec = SamplingSpec::new(Scheme::GroupSpecific, 3);
        assert_eq!(
            mask_group_specific(&x, &spec).unwrap(),
            mask_group_specific(&x, &spec).unwrap()
        );
        let bad = DenseMatrix::from_element(2, 2, 0.5);
        assert!(mask_group_specific(&bad, &spec).is_err());
    }

    #[test]
    fn alpha_order_statistic() {
        let x = DenseMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, -4.0]);
        assert_eq!(calibrate_alpha(&x, 0.5).unwrap(), 2.0);
        assert_eq!(calibrate_alpha(&x, 1.0).unwrap(), 4.0);
        let spec = SamplingSpec {
            target_fraction: 1.0,
            ..SamplingSpec::new(Scheme::MeanCentric, 0)
        };
        assert_eq!(mask_mean_centric(&x, &spec).unwrap().len(), 4);
    }

    #[test]
    fn alpha_threshold_count_on_gaussian() {
        let x = gaussian(100, 100, 4, 1);
        let alpha = calibrate_alpha(&x, 0.5).unwrap();
        assert_eq!(x.iter().filter(|v| v.abs() <= alpha).count(), 5000);
    }

    #[test]
    fn mean_centric_small_case() {
        let x = DenseMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 3.0, -4.0]);
        let o = mask_mean_centric(&x, &SamplingSpec::new(Scheme::MeanCentric, 0)).unwrap();
        assert_eq!(o.indices(), &[(0, 0), (0, 1)]);
    }

    #[test]
    fn mean_centric_partition_by_magnitude() {
        for seed in 0..5 {
            let x = gaussian(37, 23, 3, seed);
            let o = mask_mean_centric(&x, &SamplingSpec::new(Scheme::MeanCentric, 0)).unwrap();
            assert_eq!(o.len(), (37usize * 23).div_ceil(2));
            let max_in = o.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let min_out = row_major((37, 23))
                .filter(|&(i, j)| !o.contains(i, j))
                .map(|(i, j)| x[(i, j)].abs())
                .fold(f64::INFINITY, f64::min);
            assert!(max_in <= min_out);
        }
    }

    #[test]
    fn mean_centric_ties_broken_by_index() {
        let x = DenseMatrix::from_element(2, 3, 1.0);
        let o = mask_mean_centric(&x, &SamplingSpec::new(Scheme::MeanCentric, 0)).unwrap();
        assert_eq!(o.indices(), &[(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn mean_centric_empirical_center() {
        let x = DenseMatrix::from_row_slice(1, 4, &[10.0, 11.0, 12.0, 13.5]);
        let spec = SamplingSpec {
            centering: Centering::EmpiricalMean,
            ..SamplingSpec::new(Scheme::MeanCentric, 0)
        };
        let o = mask_mean_centric(&x, &spec).unwrap();
        assert_eq!(o.indices(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn uniform_counts_and_determinism() {
        let x = gaussian(100, 100, 2, 0);
        let spec = SamplingSpec::new(Scheme::Uniform, 12);
        let o = mask_uniform(&x, &spec).unwrap();
        assert_eq!(o.len(), 5000);
        assert_eq!(o, mask_uniform(&x, &spec).unwrap());
        let full = SamplingSpec {
            target_fraction: 1.0,
            ..spec
        };
        assert_eq!(mask_uniform(&x, &full).unwrap().len(), 10_000);
    }

    #[test]
    fn uniform_ignores_values() {
        let spec = SamplingSpec::new(Scheme::Uniform, 5);
        let a = mask_uniform(&gaussian(30, 30, 2, 1), &spec).unwrap();
        let b = mask_uniform(&gaussian(30, 30, 2, 2), &spec).unwrap();
        assert_eq!(a.indices(), b.indices());
    }

    #[test]
    fn uniform_inclusion_frequency_is_flat() {
        let (m, n) = (100, 100);
        let mut counts = vec![0u32; m * n];
        for seed in 0..200 {
            for (i, j) in
                uniform_indices((m, n), &SamplingSpec::new(Scheme::Uniform, seed)).unwrap()
            {
                counts[i * n + j] += 1;
            }
        }
        let freq: Vec<f64> = counts.iter().map(|&c| f64::from(c) / 200.0).collect();
        let mean = freq.iter().sum::<f64>() / freq.len() as f64;
        assert!((mean - 0.5).abs() < 1e-12);
        // per-row averages smooth out the binomial noise of single entries
        for i in 0..m {
            let row = freq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
            assert!((row - 0.5).abs() <= 0.05, "row {i}: {row}");
        }
    }

    #[test]
    fn uniform_bernoulli_rate() {
        let spec = SamplingSpec {
            uniform_mode: UniformMode::Bernoulli {
                oversampling: 2.0,
                rank: 5,
            },
            ..SamplingSpec::new(Scheme::Uniform, 1)
        };
        let idx = uniform_indices((100, 100), &spec).unwrap();
        let p = 2.0 * 5.0 * 195.0 / 10_000.0;
        let sd = (p * (1.0 - p) * 10_000.0f64).sqrt();
        assert!(((idx.len() as f64) - p * 10_000.0).abs() < 5.0 * sd);
    }

    #[test]
    fn scheme_names_roundtrip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("bogus".parse::<Scheme>().is_err());
    }
}
