//! Ready-made structures: heteroscedastic nonlinear regression, nonlinear
//! mixed effects, errors-in-variables and log-symmetric regression.

mod eiv;
mod hetero;
mod logsym;
pub mod mean;
mod mixed;

pub use eiv::ErrorsInVariables;
pub use hetero::{HeteroNonlinear, VarianceLink};
pub use logsym::LogSymmetric;
pub use mean::{ExpLinear, LinearMean, LogOf, LogisticMean, MeanFunction};
pub use mixed::MixedEffects;
