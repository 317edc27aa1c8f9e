//! Maximum likelihood, second-order bias correction and Firth-type bias
//! reduction for multivariate elliptical regression models.
//!
//! The pieces, bottom-up:
//!
//! * [`family`] — density generating functions, `W_g`, radial ψ-moments, sampling;
//! * [`model`] / [`blocks`] — the model abstraction and the `F, H, M, H̃, s` matrices;
//! * [`estimation`] — Fisher scoring, the bias vector, BC and BR estimators;
//! * [`zoo`] — ready-made heteroscedastic nonlinear, mixed-effects,
//!   errors-in-variables and log-symmetric models;
//! * [`sim`] — Monte Carlo harness and the leave-one-out influence statistic;
//! * [`cli`] — the command-line front end behind the `elliptic-bias` binary.

// `!(x > 0.0)` is used on purpose so that NaN fails domain checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod family;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod quadrature;
pub mod sim;
pub mod zoo;

pub use blocks::{assemble_blocks, fisher_information, log_likelihood, score, BlockMatrices};
pub use error::{Error, Result};
pub use estimation::{
    bias_vector, bias_vector_normal_reduced, bias_vector_orthogonal, fit, fit_bc, fit_br, fit_mle,
    information_criteria, BiasComponents, EstimatorSet, FitOptions, FitResult, Start,
};
pub use family::{DensityFamily, FamilyKind, GeneratingFunction, PsiMoments};
pub use model::{ModelSpec, ObservationBlock, Structure};
