//! Log-symmetric regression for positive responses: `T_i = η_i ε_i^{√φ_i}`,
//! i.e. `log T_i` is elliptical with location `log η(x_i, α)` and scale
//! `φ_i = h(ω_iᵀγ)`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::family::DensityFamily;
use crate::model::{ModelSpec, ObservationBlock};

use super::hetero::{HeteroNonlinear, VarianceLink};
use super::mean::{ExpLinear, LogOf, MeanFunction};

#[derive(Clone, Debug)]
pub struct LogSymmetric {
    /// Positive median function `η(x, α)`.
    pub median: Arc<dyn MeanFunction>,
    pub link: VarianceLink,
    pub p2: usize,
}

impl LogSymmetric {
    pub fn new(median: Arc<dyn MeanFunction>, link: VarianceLink, p2: usize) -> Self {
        Self { median, link, p2 }
    }

    /// `η = exp(xᵀβ)`, `φ = exp(ωᵀγ)`.
    pub fn log_linear(k: usize, p2: usize) -> Self {
        Self::new(Arc::new(ExpLinear { k }), VarianceLink::Exp, p2)
    }

    /// The equivalent structure on the log scale.
    pub fn structure(&self) -> HeteroNonlinear {
        HeteroNonlinear::new(Arc::new(LogOf(self.median.clone())), self.link, self.p2)
    }

    /// Builds the model from blocks whose `y` holds the positive responses `T_i`.
    pub fn into_model(self, blocks: Vec<ObservationBlock>, family: DensityFamily) -> Result<ModelSpec> {
        let logged = blocks
            .into_iter()
            .map(|b| {
                if b.q() != 1 {
                    return Err(Error::Dimension("log-symmetric responses are scalar".into()));
                }
                let t = b.y[0];
                if !(t > 0.0) {
                    return Err(Error::Domain(format!(
                        "log-symmetric response must be positive, got {t}"
                    )));
                }
                Ok(ObservationBlock::new(DVector::from_element(1, t.ln()), b.x, b.w))
            })
            .collect::<Result<Vec<_>>>()?;
        self.structure().into_model(logged, family)
    }
}
