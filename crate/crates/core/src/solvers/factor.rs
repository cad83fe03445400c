use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{lsqr_least_norm, scatter_omega, LiftedOperator, LinearOperator};
use crate::model::{sorted_svd, truncated_svd, DenseMatrix, ObservationSet, SolverReport};

use super::check_sampling;

const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct R2rilsParams {
    /// Outer iteration cap (`t_out`; the demo's `t_max` is the same cap).
    pub max_outer: usize,
    /// LSQR iteration cap per subproblem (`t_in`).
    pub max_inner: usize,
    /// Masked relative residual tolerance, also used for the inner LSQR.
    pub rtol: f64,
}

impl Default for R2rilsParams {
    fn default() -> Self {
        Self {
            max_outer: 40,
            max_inner: 150,
            rtol: 1e-11,
        }
    }
}

impl R2rilsParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.max_inner == 0 || !(self.rtol > 0.0) {
            return Err(Error::Config(
                "r2rils needs positive iteration caps and rtol".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnmrParams {
    /// Outer iteration cap (`t_out`).
    pub max_outer: usize,
    /// LSQR iteration cap per subproblem (`t_in`).
    pub max_inner: usize,
    /// Masked relative residual tolerance (`rel_res`).
    pub rel_res: f64,
    /// Inexact Gauss-Newton forcing factor: each LSQR solve stops at
    /// `clamp(forcing * residual, rel_res, forcing)`. Zero solves every
    /// subproblem to `rel_res`.
    pub forcing: f64,
    /// Step weight `w` in `(1 - w) (U_t, V_t) + w (U, V)`; 1 takes the
    /// subproblem solution directly.
    pub weight: f64,
    pub variant: GnmrVariant,
    /// Residual below which `Hybrid` switches to the updating form.
    pub switch_residual: f64,
    /// Halve the step until the masked residual decreases. Off by default:
    /// monotone steps tend to stall in poor basins under biased masks.
    pub backtracking: bool,
}

/// Which minimum-norm solution of the rank-deficient linearized problem is
/// taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GnmrVariant {
    /// Smallest correction `(U - U_t, V - V_t)`.
    Updating,
    /// Smallest new factors `(U, V)`.
    Setting,
    /// `Setting` until the residual drops below `switch_residual`, then
    /// `Updating`.
    #[default]
    Hybrid,
}

impl Default for GnmrParams {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_inner: 2000,
            rel_res: 1e-11,
            forcing: 0.1,
            weight: 1.0,
            variant: GnmrVariant::Hybrid,
            switch_residual: 1e-4,
            backtracking: false,
        }
    }
}

impl GnmrParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.max_inner == 0 || !(self.rel_res > 0.0) {
            return Err(Error::Config(
                "gnmr needs positive iteration caps and rel_res".into(),
            ));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::Config(format!(
                "gnmr weight {} outside (0, 1]",
                self.weight
            )));
        }
        if !(0.0..1.0).contains(&self.forcing) || !(self.switch_residual >= 0.0) {
            return Err(Error::Config(
                "gnmr forcing must lie in [0, 1) and switch_residual be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Rank-`r` truncated SVD of the zero-filled observations.
pub fn spectral_init(omega: &ObservationSet, rank: usize) -> Result<crate::model::TruncatedSvd> {
    truncated_svd(&scatter_omega(omega.values(), omega)?, rank)
}

/// Scales each column to unit norm; zero columns are left alone.
pub fn column_normalize(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col.scale_mut(1.0 / nrm);
        }
    }
    out
}

/// Orthonormal basis of the column space, via thin QR. Columns are signed
/// so the triangular factor has a nonnegative diagonal (the Gram-Schmidt
/// orientation), which keeps each column pointing the same way as its input.
pub fn orthonormalize(x: &DenseMatrix) -> DenseMatrix {
    let qr = x.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for (k, mut col) in q.column_iter_mut().enumerate() {
        if r[(k, k)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// R2RILS subspace update: `orth(colnorm(current) + colnorm(step))`.
pub fn r2rils_average(current: &DenseMatrix, step: &DenseMatrix) -> DenseMatrix {
    orthonormalize(&(column_normalize(current) + column_normalize(step)))
}

/// Re-splits the scale of `U V^T` between the factors so both carry
/// `sqrt` of the singular values. The product is unchanged.
pub fn rebalance(u: &DenseMatrix, v: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let qu = u.clone().qr();
    let qv = v.clone().qr();
    let core = qu.r() * qv.r().transpose();
    let svd = sorted_svd(&core);
    let mut left = qu.q() * svd.u;
    let mut right = qv.q() * svd.v;
    for (k, s) in svd.sigma.iter().enumerate() {
        let root = s.sqrt();
        left.column_mut(k).scale_mut(root);
        right.column_mut(k).scale_mut(root);
    }
    (left, right)
}

fn masked_residual(x: &DenseMatrix, omega: &ObservationSet, bnorm: f64) -> f64 {
    omega
        .indices()
        .iter()
        .zip(omega.values())
        .map(|(&(i, j), b)| (x[(i, j)] - b).powi(2))
        .sum::<f64>()
        .sqrt()
        / bnorm
}

fn observed_norm(omega: &ObservationSet) -> Result<f64> {
    let bnorm = omega.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Err(Error::Degenerate("all observed values are zero".into()));
    }
    Ok(bnorm)
}

/// Rank 2r iterative least squares.
///
/// Each outer step solves `min ||U_t B^T + A V_t^T - X||_F(Ω)` for
/// `A` (m×r) and `B` (n×r) with minimum-norm LSQR, then averages the
/// normalized columns of `A`, `B` into the current orthonormal bases. The
/// returned estimate is the best rank-`r` approximation of the last
/// rank-`2r` least-squares fit.
pub fn r2rils_solve(
    omega: &ObservationSet,
    rank: usize,
    params: &R2rilsParams,
) -> Result<SolverReport> {
    params.validate()?;
    check_sampling(omega, rank)?;
    let start = Instant::now();
    let bnorm = observed_norm(omega)?;
    let init = spectral_init(omega, rank)?;
    let (mut u, mut v) = (init.u, init.v);

    let mut fit = DenseMatrix::zeros(omega.shape().0, omega.shape().1);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_outer {
        iterations += 1;
        let op = LiftedOperator::new(&u, &v, omega)?;
        let ls = lsqr_least_norm(&op, omega.values(), params.max_inner, params.rtol)?;
        let (a, b) = op.unstack(&ls.solution);
        let candidate = &u * b.transpose() + &a * v.transpose();
        if candidate.iter().any(|x| !x.is_finite()) {
            break;
        }
        fit = candidate;
        residual = masked_residual(&fit, omega, bnorm);
        if residual < params.rtol {
            converged = true;
            break;
        }
        u = r2rils_average(&u, &a);
        v = r2rils_average(&v, &b);
    }

    let estimate = truncated_svd(&fit, rank)?.reconstruct();
    Ok(SolverReport {
        final_relative_residual: if converged {
            residual
        } else {
            masked_residual(&estimate, omega, bnorm)
        },
        estimate,
        outer_iterations: iterations,
        converged,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Gauss-Newton matrix recovery.
///
/// Each outer step linearizes `U V^T` around `(U_t, V_t)` and solves
/// `min ||P_Ω(U_t V^T + U V_t^T) - (b + P_Ω(U_t V_t^T))||` for the new
/// factors, taking the minimum-norm solution from LSQR. Factors are
/// rebalanced after every step.
pub fn gnmr_solve(
    omega: &ObservationSet,
    rank: usize,
    params: &GnmrParams,
) -> Result<SolverReport> {
    params.validate()?;
    check_sampling(omega, rank)?;
    let start = Instant::now();
    let bnorm = observed_norm(omega)?;
    let init = spectral_init(omega, rank)?;
    let mut u = init.u.clone();
    let mut v = init.v.clone();
    for (k, s) in init.sigma.iter().enumerate() {
        u.column_mut(k).scale_mut(s.sqrt());
        v.column_mut(k).scale_mut(s.sqrt());
    }

    let mut iterations = 0;
    let mut estimate = &u * v.transpose();
    let mut residual = masked_residual(&estimate, omega, bnorm);
    let mut converged = residual < params.rel_res;

    while !converged && iterations < params.max_outer {
        iterations += 1;
        let op = LiftedOperator::new(&u, &v, omega)?;
        let inner_tol = if params.forcing > 0.0 {
            (params.forcing * residual).clamp(params.rel_res, params.forcing)
        } else {
            params.rel_res
        };
        let form = match params.variant {
            GnmrVariant::Hybrid if residual < params.switch_residual => GnmrVariant::Updating,
            GnmrVariant::Hybrid => GnmrVariant::Setting,
            v => v,
        };
        let (u_new, v_new) = match form {
            GnmrVariant::Updating => {
                // op(dU, dV) = b - P_Ω(U_t V_t^T); minimum-norm correction
                let rhs: Vec<f64> = omega
                    .indices()
                    .iter()
                    .zip(omega.values())
                    .map(|(&(i, j), b)| b - estimate[(i, j)])
                    .collect();
                let ls = lsqr_least_norm(&op, &rhs, params.max_inner, inner_tol)?;
                let (du, dv) = op.unstack(&ls.solution);
                (&u + du * params.weight, &v + dv * params.weight)
            }
            GnmrVariant::Setting | GnmrVariant::Hybrid => {
                // op(U_t, V_t) = 2 P_Ω(U_t V_t^T); minimum-norm new factors
                let mut current = vec![0.0; op.output_dim()];
                op.apply(&op.stack(&u, &v), &mut current);
                let rhs: Vec<f64> = omega
                    .values()
                    .iter()
                    .zip(&current)
                    .map(|(b, c)| b + 0.5 * c)
                    .collect();
                let ls = lsqr_least_norm(&op, &rhs, params.max_inner, inner_tol)?;
                let (un, vn) = op.unstack(&ls.solution);
                (
                    &u * (1.0 - params.weight) + un * params.weight,
                    &v * (1.0 - params.weight) + vn * params.weight,
                )
            }
        };
        if u_new.iter().chain(v_new.iter()).any(|x| !x.is_finite()) {
            break;
        }
        let mut step = 1.0;
        let mut halvings = 0;
        let (u_next, v_next, next_estimate, next_residual) = loop {
            let (uc, vc) = if step == 1.0 {
                (u_new.clone(), v_new.clone())
            } else {
                (&u + (&u_new - &u) * step, &v + (&v_new - &v) * step)
            };
            let est = &uc * vc.transpose();
            let res = masked_residual(&est, omega, bnorm);
            if !params.backtracking || res < residual || halvings == MAX_HALVINGS {
                break (uc, vc, est, res);
            }
            step *= 0.5;
            halvings += 1;
        };
        let (ub, vb) = rebalance(&u_next, &v_next);
        u = ub;
        v = vb;
        estimate = next_estimate;
        residual = next_residual;
        converged = residual < params.rel_res;
    }

    Ok(SolverReport {
        estimate,
        outer_iterations: iterations,
        final_relative_residual: residual,
        converged,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn uniform_omega(rng: &mut ChaCha8Rng, x: &DenseMatrix, p: f64) -> ObservationSet {
        let idx: Vec<_> = (0..x.nrows())
            .flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(p))
            .collect();
        ObservationSet::from_matrix(x, idx).unwrap()
    }

    #[test]
    fn r2rils_average_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let u = orthonormalize(&random(&mut rng, 20, 3));
        let a = random(&mut rng, 20, 3);
        let next = r2rils_average(&u, &a);
        let eye = DenseMatrix::identity(3, 3);
        assert!((next.transpose() * &next - eye).abs().max() < 1e-10);
    }

    #[test]
    fn column_normalize_skips_zero_columns() {
        let x = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 0.0]);
        let y = column_normalize(&x);
        assert!((y[(0, 0)] - 0.6).abs() < 1e-15 && (y[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(y[(0, 1)], 0.0);
    }

    #[test]
    fn rebalance_preserves_product_and_balances() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u = random(&mut rng, 12, 3) * 100.0;
        let v = random(&mut rng, 9, 3) * 0.01;
        let (ub, vb) = rebalance(&u, &v);
        let before = &u * v.transpose();
        let after = &ub * vb.transpose();
        assert!((after - &before).norm() <= 1e-12 * before.norm());
        let gram_u = ub.transpose() * &ub;
        let gram_v = vb.transpose() * &vb;
        assert!((gram_u - gram_v).norm() <= 1e-10 * before.norm());
    }

    #[test]
    fn undersampling_rejected() {
        let x = DenseMatrix::from_element(10, 10, 1.0);
        let o = ObservationSet::from_matrix(&x, (0..10).map(|i| (i, i)).collect()).unwrap();
        assert!(matches!(
            r2rils_solve(&o, 1, &R2rilsParams::default()),
            Err(Error::Undersampled { .. })
        ));
        assert!(matches!(
            gnmr_solve(&o, 2, &GnmrParams::default()),
            Err(Error::Undersampled { .. })
        ));
    }

    #[test]
    fn full_observation_first_step_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = random(&mut rng, 10, 2) * random(&mut rng, 8, 2).transpose();
        let o = ObservationSet::full(&x).unwrap();
        let r = r2rils_solve(&o, 2, &R2rilsParams::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.outer_iterations, 1);
        assert!((&r.estimate - &x).norm() <= 1e-9 * x.norm());
        let g = gnmr_solve(&o, 2, &GnmrParams::default()).unwrap();
        assert!(g.converged);
        assert!((&g.estimate - &x).norm() <= 1e-9 * x.norm());
    }

    /// With exact factors the linearized subproblem is solved by the factors
    /// themselves, so the masked residual is already zero.
    #[test]
    fn gnmr_exact_factors_are_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let u = random(&mut rng, 15, 2);
        let v = random(&mut rng, 12, 2);
        let x = &u * v.transpose();
        let o = uniform_omega(&mut rng, &x, 0.6);
        let op = LiftedOperator::new(&u, &v, &o).unwrap();
        let mut y = vec![0.0; op.output_dim()];
        op.apply(&op.stack(&u, &v), &mut y);
        let rhs: Vec<f64> = o
            .values()
            .iter()
            .zip(&y)
            .map(|(b, c)| b + 0.5 * c)
            .collect();
        for ((yk, rk), bk) in y.iter().zip(&rhs).zip(o.values()) {
            assert!((yk - rk).abs() <= 1e-12 * (1.0 + bk.abs()));
        }
    }

    #[test]
    fn gnmr_recovers_small_uniform_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let x = random(&mut rng, 30, 2) * random(&mut rng, 25, 2).transpose();
        let o = uniform_omega(&mut rng, &x, 0.5);
        let rep = gnmr_solve(&o, 2, &GnmrParams::default()).unwrap();
        assert!((&rep.estimate - &x).norm() <= 1e-8 * x.norm());
        let again = gnmr_solve(&o, 2, &GnmrParams::default()).unwrap();
        assert_eq!(rep.estimate.as_slice(), again.estimate.as_slice());
        assert_eq!(rep.outer_iterations, again.outer_iterations);
    }

    #[test]
    fn r2rils_recovers_small_uniform_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let x = random(&mut rng, 30, 2) * random(&mut rng, 25, 2).transpose();
        let o = uniform_omega(&mut rng, &x, 0.5);
        let rep = r2rils_solve(&o, 2, &R2rilsParams::default()).unwrap();
        assert!((&rep.estimate - &x).norm() <= 1e-6 * x.norm());
    }
}
