//! Simulation designs: a structure, its true θ and a covariate generator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObservationBlock, Structure};
use crate::zoo::{ErrorsInVariables, HeteroNonlinear, LogSymmetric, MixedEffects, VarianceLink};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// `α₁ + α₂/(1 + α₃x^{α₄})`, constant σ², `x ~ U(x_range)`.
    Nonlinear,
    /// `β₀ + β₁x`, constant σ², `x ~ U(x_range)`.
    Linear,
    /// Errors-in-variables with `v = m = 1`.
    Eiv,
    /// Log-linear median `exp(β₀ + β₁x)`, constant dispersion `exp(γ)`.
    LogSymmetric,
    /// Random intercept on four occasions `t = 0..3`, linear trend.
    Mixed,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Nonlinear,
        ModelKind::Linear,
        ModelKind::Eiv,
        ModelKind::LogSymmetric,
        ModelKind::Mixed,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "nonlinear" | "hetero-nonlinear" => Ok(Self::Nonlinear),
            "linear" => Ok(Self::Linear),
            "eiv" | "errors-in-variables" => Ok(Self::Eiv),
            "log-symmetric" | "logsym" => Ok(Self::LogSymmetric),
            "mixed" | "mixed-effects" => Ok(Self::Mixed),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected nonlinear, linear, eiv, log-symmetric, mixed)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Nonlinear => "nonlinear",
            Self::Linear => "linear",
            Self::Eiv => "eiv",
            Self::LogSymmetric => "log-symmetric",
            Self::Mixed => "mixed",
        }
    }

    pub fn structure(self) -> Arc<dyn Structure> {
        match self {
            Self::Nonlinear => Arc::new(HeteroNonlinear::logistic()),
            Self::Linear => Arc::new(HeteroNonlinear::linear(2, VarianceLink::Identity, 1)),
            Self::Eiv => Arc::new(ErrorsInVariables::new(1, 1)),
            Self::LogSymmetric => Arc::new(LogSymmetric::log_linear(2, 1).structure()),
            Self::Mixed => Arc::new(MixedEffects::linear(2, 1)),
        }
    }

    pub fn default_theta(self) -> Vec<f64> {
        match self {
            Self::Nonlinear => vec![50.0, 500.0, 0.5, 2.0, 200.0],
            Self::Linear => vec![2.0, 0.5, 200.0],
            Self::Eiv => vec![0.7, 0.4, 70.0, 250.0, 40.0],
            Self::LogSymmetric => vec![1.0, 0.5, (0.25f64).ln()],
            Self::Mixed => vec![10.0, 2.0, 4.0, 1.0],
        }
    }

    pub fn default_x_range(self) -> [f64; 2] {
        match self {
            Self::LogSymmetric => [0.0, 1.0],
            _ => [0.0, 100.0],
        }
    }

    /// Whether the design has a scalar covariate that can be supplied explicitly.
    pub fn has_scalar_covariate(self) -> bool {
        matches!(self, Self::Nonlinear | Self::Linear | Self::LogSymmetric)
    }

    /// Replaces the scalar covariate of each block by `x[i]`.
    pub fn set_covariate(self, blocks: &mut [ObservationBlock], x: &[f64]) {
        for (b, &xi) in blocks.iter_mut().zip(x) {
            match self {
                Self::Nonlinear => b.x[0] = xi,
                Self::Linear | Self::LogSymmetric => b.x[1] = xi,
                _ => {}
            }
        }
    }

    /// Covariates for `n` blocks; responses are placeholders (filled by the caller).
    pub fn covariates<R: Rng>(self, n: usize, x_range: [f64; 2], tau: [f64; 2], rng: &mut R) -> Vec<ObservationBlock> {
        let mut draw = || x_range[0] + (x_range[1] - x_range[0]) * rng.random::<f64>();
        (0..n)
            .map(|_| match self {
                Self::Nonlinear => ObservationBlock::scalar(0.0, vec![draw()], vec![]),
                Self::Linear | Self::LogSymmetric => ObservationBlock::scalar(0.0, vec![1.0, draw()], vec![]),
                Self::Eiv => ErrorsInVariables::observation(
                    &[0.0],
                    &[0.0],
                    &DMatrix::from_element(1, 1, tau[0]),
                    &DMatrix::from_element(1, 1, tau[1]),
                ),
                Self::Mixed => {
                    let x: Vec<f64> = (0..4).flat_map(|t| [1.0, t as f64]).collect();
                    ObservationBlock::new(DVector::zeros(4), x, vec![1.0; 4])
                }
            })
            .collect()
    }
}
