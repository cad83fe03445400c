use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{project_omega, scatter_omega};
use crate::model::{singular_values, sorted_svd, DenseMatrix, ObservationSet, SolverReport};

/// How the regularization weight is driven down to its floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continuation {
    /// Iterate at a fixed weight until the relative change drops below
    /// `xtol`, then shrink the weight by `eta`.
    #[default]
    Staged,
    /// Shrink the weight by `eta` after every iteration.
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkageParams {
    /// Final regularization weight (the continuation floor).
    pub mu: f64,
    /// Relative-change tolerance `||X+ - X||_F / max(1, ||X||_F)`.
    pub xtol: f64,
    /// Total iteration cap across all continuation stages.
    pub max_iter: usize,
    /// Gradient step.
    pub tau: f64,
    /// Continuation factor in (0, 1).
    pub eta: f64,
    pub continuation: Continuation,
}

impl ShrinkageParams {
    pub fn fpca() -> Self {
        Self {
            mu: 1e-8,
            xtol: 1e-6,
            max_iter: 500,
            tau: 1.0,
            eta: 0.25,
            continuation: Continuation::Staged,
        }
    }

    pub fn nnls() -> Self {
        Self {
            mu: 1e-8,
            xtol: 1e-4,
            max_iter: 100,
            tau: 1.0,
            eta: 0.8,
            continuation: Continuation::PerIteration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.xtol > 0.0 && self.tau > 0.0) {
            return Err(Error::Config("mu, xtol and tau must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta {} outside (0, 1)", self.eta)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Singular value soft-thresholding: `U diag(max(sigma - theta, 0)) V^T`.
pub fn svt(x: &DenseMatrix, theta: f64) -> DenseMatrix {
    let svd = sorted_svd(x);
    let keep = svd.sigma.iter().take_while(|&&s| s > theta).count();
    let mut out = DenseMatrix::zeros(x.nrows(), x.ncols());
    if keep == 0 {
        return out;
    }
    let mut us = svd.u.columns(0, keep).into_owned();
    for k in 0..keep {
        us.column_mut(k).scale_mut(svd.sigma[k] - theta);
    }
    out.gemm(1.0, &us, &svd.v.columns(0, keep).transpose(), 0.0);
    out
}

pub fn nuclear_norm(x: &DenseMatrix) -> f64 {
    singular_values(x).iter().sum()
}

/// `mu ||X||_* + 1/2 ||P_Ω(X) - b||^2`.
pub fn regularized_objective(x: &DenseMatrix, omega: &ObservationSet, mu: f64) -> Result<f64> {
    let px = project_omega(x, omega)?;
    let fit: f64 = px
        .iter()
        .zip(omega.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(mu * nuclear_norm(x) + 0.5 * fit)
}

fn gradient(x: &DenseMatrix, omega: &ObservationSet) -> DenseMatrix {
    // P_Ω^*(P_Ω(X) - b) without the intermediate vectors
    let mut g = DenseMatrix::zeros(x.nrows(), x.ncols());
    for (&(i, j), &b) in omega.indices().iter().zip(omega.values()) {
        g[(i, j)] = x[(i, j)] - b;
    }
    g
}

/// One proximal gradient step `svt(X - tau * grad, tau * mu)`.
pub fn prox_gradient_step(
    x: &DenseMatrix,
    omega: &ObservationSet,
    tau: f64,
    mu: f64,
) -> Result<DenseMatrix> {
    omega.check_shape(x.shape())?;
    let y = x - gradient(x, omega) * tau;
    Ok(svt(&y, tau * mu))
}

fn relative_change(new: &DenseMatrix, old: &DenseMatrix) -> f64 {
    (new - old).norm() / old.norm().max(1.0)
}

fn masked_relative_residual(x: &DenseMatrix, omega: &ObservationSet) -> f64 {
    let b = omega.values();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r: f64 = omega
        .indices()
        .iter()
        .zip(b)
        .map(|(&(i, j), v)| (x[(i, j)] - v).powi(2))
        .sum::<f64>()
        .sqrt();
    if bnorm > 0.0 {
        r / bnorm
    } else {
        r
    }
}

fn shrinkage_solve(
    omega: &ObservationSet,
    params: &ShrinkageParams,
    accelerated: bool,
) -> Result<SolverReport> {
    params.validate()?;
    let start = Instant::now();
    let (m, n) = omega.shape();
    let zero_filled = scatter_omega(omega.values(), omega)?;
    let sigma1 = singular_values(&zero_filled)[0];
    let mut mu = sigma1.max(params.mu);

    let mut x = DenseMatrix::zeros(m, n);
    let mut x_prev = x.clone();
    let mut t_prev = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iter {
        iterations += 1;
        let base = if accelerated {
            let t = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
            let beta = (t_prev - 1.0) / t;
            t_prev = t;
            &x + (&x - &x_prev) * beta
        } else {
            x.clone()
        };
        let next = prox_gradient_step(&base, omega, params.tau, mu)?;
        let change = relative_change(&next, &x);
        x_prev = std::mem::replace(&mut x, next);
        if !change.is_finite() {
            break;
        }

        let at_floor = mu <= params.mu;
        match params.continuation {
            Continuation::Staged => {
                if change < params.xtol {
                    if at_floor {
                        converged = true;
                        break;
                    }
                    mu = (params.eta * mu).max(params.mu);
                }
            }
            Continuation::PerIteration => {
                if at_floor && change < params.xtol {
                    converged = true;
                    break;
                }
                mu = (params.eta * mu).max(params.mu);
            }
        }
    }

    Ok(SolverReport {
        final_relative_residual: masked_relative_residual(&x, omega),
        estimate: x,
        outer_iterations: iterations,
        converged,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Fixed point continuation: plain proximal gradient on the regularized
/// objective, with the weight decreased from `sigma_1(P_Ω^* b)` to `mu`.
/// Uses an exact SVD for every shrinkage step. The rank of the estimate is
/// not constrained.
pub fn fpca_solve(omega: &ObservationSet, params: &ShrinkageParams) -> Result<SolverReport> {
    shrinkage_solve(omega, params, false)
}

/// Accelerated proximal gradient (Nesterov momentum with the
/// `t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2` sequence) on the same objective
/// and continuation as [`fpca_solve`].
pub fn nnls_solve(omega: &ObservationSet, params: &ShrinkageParams) -> Result<SolverReport> {
    shrinkage_solve(omega, params, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn svt_diagonal_cases() {
        let x = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let y = svt(&x, 2.0);
        let expect = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((y - expect).norm() < 1e-14);
        assert_eq!(svt(&x, 3.5), DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn svt_shifts_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10 {
            let x = random(&mut rng, 7, 5);
            let theta = rng.random_range(0.0..1.5);
            let before = singular_values(&x);
            let after = singular_values(&svt(&x, theta));
            for (a, b) in after.iter().zip(&before) {
                assert!((a - (b - theta).max(0.0)).abs() < 1e-10);
            }
        }
    }

    /// The prox of `theta ||.||_*` must beat any competitor on
    /// `theta ||Z||_* + 1/2 ||X - Z||^2`.
    #[test]
    fn svt_is_the_proximal_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let x = random(&mut rng, 5, 4);
            let theta = rng.random_range(0.1..1.0);
            let p = svt(&x, theta);
            let f = |z: &DenseMatrix| theta * nuclear_norm(z) + 0.5 * (&x - z).norm_squared();
            let best = f(&p);
            for _ in 0..50 {
                let z = if rng.random_bool(0.5) {
                    random(&mut rng, 5, 4)
                } else {
                    &p + random(&mut rng, 5, 4) * 0.05
                };
                assert!(best <= f(&z) + 1e-12);
            }
        }
    }

    fn lowrank(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> DenseMatrix {
        random(rng, m, r) * random(rng, n, r).transpose()
    }

    #[test]
    fn fpca_objective_nonincreasing_at_fixed_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x_true = lowrank(&mut rng, 20, 15, 2);
        let idx: Vec<_> = (0..20)
            .flat_map(|i| (0..15).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let omega = ObservationSet::from_matrix(&x_true, idx).unwrap();
        let mu = 0.05;
        let mut x = DenseMatrix::zeros(20, 15);
        let mut prev = regularized_objective(&x, &omega, mu).unwrap();
        for _ in 0..40 {
            x = prox_gradient_step(&x, &omega, 1.0, mu).unwrap();
            let obj = regularized_objective(&x, &omega, mu).unwrap();
            assert!(obj <= prev + 1e-12, "{obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn full_observation_recovers_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = lowrank(&mut rng, 15, 12, 3);
        let omega = ObservationSet::full(&x).unwrap();
        for report in [
            fpca_solve(&omega, &ShrinkageParams::fpca()).unwrap(),
            nnls_solve(&omega, &ShrinkageParams::nnls()).unwrap(),
        ] {
            assert!((&report.estimate - &x).norm() <= 1e-4 * x.norm());
            assert_eq!(report.estimate.shape(), (15, 12));
        }
    }

    #[test]
    fn params_validation() {
        let mut p = ShrinkageParams::fpca();
        p.eta = 1.0;
        assert!(p.validate().is_err());
        let mut p = ShrinkageParams::nnls();
        p.max_iter = 0;
        assert!(p.validate().is_err());
    }
}
