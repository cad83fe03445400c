//! Matrix-free operators for the masked least-squares subproblems and the
//! LSQR solver that consumes them.
//!
//! The lifted unknown of both factorization subproblems is the pair
//! `(A, B)` with `A` m×r and `B` n×r, stacked as `[vec(A); vec(B)]` where
//! `vec` is column-major. The operator maps it to `P_Ω(L B^T + A R^T)` for
//! fixed anchors `L` (m×r) and `R` (n×r).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenseMatrix, ObservationSet};

pub trait LinearOperator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = A^T y`
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]);
}

/// Explicit dense operator.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub DenseMatrix);

impl LinearOperator for DenseOperator {
    fn input_dim(&self) -> usize {
        self.0.ncols()
    }

    fn output_dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (j, col) in self.0.column_iter().enumerate() {
            let xj = x[j];
            for (yi, a) in y.iter_mut().zip(col.iter()) {
                *yi += a * xj;
            }
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        for (j, col) in self.0.column_iter().enumerate() {
            x[j] = col.iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }
}

/// `P_Ω(X)`: the observed entries of `x` in Ω's canonical order.
pub fn project_omega(x: &DenseMatrix, omega: &ObservationSet) -> Result<Vec<f64>> {
    omega.check_shape(x.shape())?;
    Ok(omega.indices().iter().map(|&(i, j)| x[(i, j)]).collect())
}

/// Adjoint of [`project_omega`]: zero matrix with `v` written at Ω.
pub fn scatter_omega(v: &[f64], omega: &ObservationSet) -> Result<DenseMatrix> {
    if v.len() != omega.len() {
        return Err(Error::LengthMismatch {
            expected: omega.len(),
            actual: v.len(),
        });
    }
    let (m, n) = omega.shape();
    let mut out = DenseMatrix::zeros(m, n);
    for (&(i, j), &val) in omega.indices().iter().zip(v) {
        out[(i, j)] = val;
    }
    Ok(out)
}

/// `(A, B) -> P_Ω(L B^T + A R^T)`.
#[derive(Debug, Clone)]
pub struct LiftedOperator {
    m: usize,
    n: usize,
    r: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    // anchors stored row-major so the r coefficients of a row are contiguous
    left: Vec<f64>,
    right: Vec<f64>,
}

fn row_major(x: &DenseMatrix) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

impl LiftedOperator {
    pub fn new(left: &DenseMatrix, right: &DenseMatrix, omega: &ObservationSet) -> Result<Self> {
        let (m, n) = omega.shape();
        let r = left.ncols();
        if right.ncols() != r {
            return Err(Error::InvalidArgument(format!(
                "anchor ranks differ: {} vs {}",
                r,
                right.ncols()
            )));
        }
        if left.nrows() != m {
            return Err(Error::ShapeMismatch {
                expected: (m, r),
                actual: left.shape(),
            });
        }
        if right.nrows() != n {
            return Err(Error::ShapeMismatch {
                expected: (n, r),
                actual: right.shape(),
            });
        }
        let (rows, cols) = omega.indices().iter().copied().unzip();
        Ok(Self {
            m,
            n,
            r,
            rows,
            cols,
            left: row_major(left),
            right: row_major(right),
        })
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    /// Splits a lifted vector into `(A, B)`.
    pub fn unstack(&self, x: &[f64]) -> (DenseMatrix, DenseMatrix) {
        let split = self.m * self.r;
        (
            DenseMatrix::from_column_slice(self.m, self.r, &x[..split]),
            DenseMatrix::from_column_slice(self.n, self.r, &x[split..]),
        )
    }

    pub fn stack(&self, a: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.input_dim());
        out.extend_from_slice(a.as_slice());
        out.extend_from_slice(b.as_slice());
        out
    }
}

impl LinearOperator for LiftedOperator {
    fn input_dim(&self) -> usize {
        self.r * (self.m + self.n)
    }

    fn output_dim(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (m, n, r) = (self.m, self.n, self.r);
        let (a, b) = x.split_at(m * r);
        for (k, yk) in y.iter_mut().enumerate() {
            let i = self.rows[k];
            let j = self.cols[k];
            let l = &self.left[i * r..(i + 1) * r];
            let rr = &self.right[j * r..(j + 1) * r];
            let mut acc = 0.0;
            for c in 0..r {
                acc += l[c] * b[c * n + j] + a[c * m + i] * rr[c];
            }
            *yk = acc;
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        let (m, n, r) = (self.m, self.n, self.r);
        x.fill(0.0);
        let (a, b) = x.split_at_mut(m * r);
        for (k, &yk) in y.iter().enumerate() {
            let i = self.rows[k];
            let j = self.cols[k];
            let l = &self.left[i * r..(i + 1) * r];
            let rr = &self.right[j * r..(j + 1) * r];
            for c in 0..r {
                a[c * m + i] += yk * rr[c];
                b[c * n + j] += yk * l[c];
            }
        }
    }
}

/// R2RILS subproblem operator, `(A, B) -> P_Ω(U_t B^T + A V_t^T)`.
pub fn lifted_operator_r2rils(
    u_t: &DenseMatrix,
    v_t: &DenseMatrix,
    omega: &ObservationSet,
) -> Result<LiftedOperator> {
    LiftedOperator::new(u_t, v_t, omega)
}

/// GNMR subproblem operator, `(U, V) -> P_Ω(U_t V^T + U V_t^T)`. The caller
/// supplies `b + P_Ω(U_t V_t^T)` as the right-hand side.
pub fn lifted_operator_gnmr(
    u_t: &DenseMatrix,
    v_t: &DenseMatrix,
    omega: &ObservationSet,
) -> Result<LiftedOperator> {
    LiftedOperator::new(u_t, v_t, omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Tolerance,
    IterationCap,
    Breakdown,
}

#[derive(Debug, Clone)]
pub struct LsqrOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||`, recomputed from the returned solution.
    pub relative_residual: f64,
    pub stop_reason: StopReason,
    /// Residual-norm estimate after each iteration.
    pub residual_history: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

/// Golub-Kahan bidiagonalization least squares (Paige & Saunders), started
/// from `x = 0` so the iterates stay in `range(A^T)` and converge to the
/// minimum-norm solution. No damping, no preconditioning.
///
/// Stops when `||r|| / ||b|| <= tol` or
/// `||A^T r|| / (||A||_est ||r||) <= tol`.
pub fn lsqr_least_norm(
    op: &dyn LinearOperator,
    rhs: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<LsqrOutcome> {
    if rhs.len() != op.output_dim() {
        return Err(Error::LengthMismatch {
            expected: op.output_dim(),
            actual: rhs.len(),
        });
    }
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::InvalidArgument(
            "lsqr needs max_iter >= 1 and tol > 0".into(),
        ));
    }
    let nx = op.input_dim();
    let mut x = vec![0.0; nx];
    let bnorm = norm(rhs);
    if !bnorm.is_finite() {
        return Ok(LsqrOutcome {
            solution: x,
            iterations: 0,
            relative_residual: f64::NAN,
            stop_reason: StopReason::Breakdown,
            residual_history: Vec::new(),
        });
    }
    if bnorm == 0.0 {
        return Ok(LsqrOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            stop_reason: StopReason::Tolerance,
            residual_history: Vec::new(),
        });
    }

    let mut u = rhs.to_vec();
    scale(&mut u, 1.0 / bnorm);
    let mut beta;
    let mut v = vec![0.0; nx];
    op.apply_adjoint(&u, &mut v);
    let mut alpha = norm(&v);
    if alpha > 0.0 {
        scale(&mut v, 1.0 / alpha);
    }
    let mut w = v.clone();
    let mut phibar = bnorm;
    let mut rhobar = alpha;
    let mut anorm_sq = 0.0;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut tmp_u = vec![0.0; u.len()];
    let mut tmp_v = vec![0.0; nx];

    let stop_reason = if alpha == 0.0 {
        // A^T b = 0: x = 0 is already the least-squares solution
        StopReason::Tolerance
    } else {
        loop {
            iterations += 1;

            op.apply(&v, &mut tmp_u);
            for (ui, ti) in u.iter_mut().zip(&tmp_u) {
                *ui = ti - alpha * *ui;
            }
            beta = norm(&u);
            if beta > 0.0 {
                scale(&mut u, 1.0 / beta);
            }
            anorm_sq += alpha * alpha + beta * beta;

            op.apply_adjoint(&u, &mut tmp_v);
            for (vi, ti) in v.iter_mut().zip(&tmp_v) {
                *vi = ti - beta * *vi;
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                scale(&mut v, 1.0 / alpha);
            }

            let rho = rhobar.hypot(beta);
            let c = rhobar / rho;
            let s = beta / rho;
            let theta = s * alpha;
            rhobar = -c * alpha;
            let phi = c * phibar;
            phibar *= s;

            let step = phi / rho;
            let shrink = theta / rho;
            for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
                *xi += step * *wi;
                *wi = vi - shrink * *wi;
            }

            if !(phibar.is_finite() && alpha.is_finite() && beta.is_finite() && step.is_finite()) {
                break StopReason::Breakdown;
            }
            history.push(phibar);

            let rnorm = phibar;
            let arnorm = phibar * alpha * c.abs();
            let anorm = anorm_sq.sqrt();
            if rnorm <= tol * bnorm || arnorm <= tol * anorm * rnorm {
                break StopReason::Tolerance;
            }
            if alpha == 0.0 || beta == 0.0 {
                break StopReason::Tolerance;
            }
            if iterations >= max_iter {
                break StopReason::IterationCap;
            }
        }
    };

    let mut ax = vec![0.0; rhs.len()];
    op.apply(&x, &mut ax);
    let resid: f64 = ax
        .iter()
        .zip(rhs)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let stop_reason = if x.iter().any(|v| !v.is_finite()) {
        StopReason::Breakdown
    } else {
        stop_reason
    };
    Ok(LsqrOutcome {
        solution: x,
        iterations,
        relative_residual: resid / bnorm,
        stop_reason,
        residual_history: history,
    })
}
