//! Low-rank matrix completion under value-dependent sampling.
//!
//! The crate bundles four pieces that are normally scattered across separate
//! MATLAB demos:
//!
//! * synthetic ground-truth generators ([`datagen`]),
//! * observation masks whose pattern may depend on the matrix values
//!   ([`sampling`]): ReLU truncation, group-specific Bernoulli, magnitude
//!   truncation and uniform sampling,
//! * four completion solvers ([`solvers`]): FPCA, NNLS (accelerated proximal
//!   gradient), R2RILS and GNMR, the latter two built on the matrix-free
//!   operators and LSQR in [`linops`],
//! * a seeded sweep runner with CSV output ([`runner`]) and the error metrics
//!   it reports ([`eval`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod datagen;
pub mod error;
pub mod eval;
pub mod linops;
pub mod model;
pub mod rng;
pub mod runner;
pub mod sampling;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{
    frobenius_norm, masked_frobenius_norm, truncated_svd, DenseMatrix, FactorPair, ObservationSet,
    SolverReport, TruncatedSvd,
};
