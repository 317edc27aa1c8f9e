//! Fisher scoring, the second-order bias vector, and the bias-corrected and
//! bias-reduced estimators built on it.

mod bias;
mod criteria;
mod fit;

pub use bias::{
    bias_vector, bias_vector_normal_reduced, bias_vector_orthogonal, BiasComponents, BiasPath, ObservationBias,
};
pub use criteria::{information_criteria, InformationCriteria};
pub use fit::{
    fit, fit_bc, fit_br, fit_mle, heuristic_start, modified_score, Estimate, EstimatorSet, FitOptions, FitResult,
    IterationRecord, Start,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of the Fisher information, rejecting near-singular matrices.
///
/// Singularity is judged on the correlation-scaled matrix so that parameters of
/// very different magnitude (a variance of 200 next to an exponent of 0.5) do
/// not trip the check.
pub(crate) fn factor_information(k: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let p = k.nrows();
    if !k.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularInformation);
    }
    let d: Vec<f64> = (0..p).map(|r| k[(r, r)]).collect();
    if d.iter().any(|&x| x <= 0.0) {
        return Err(Error::SingularInformation);
    }
    let corr = DMatrix::from_fn(p, p, |r, s| k[(r, s)] / (d[r] * d[s]).sqrt());
    let cc = Cholesky::new(corr).ok_or(Error::SingularInformation)?;
    let min_pivot = cc.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &x| m.min(x));
    if min_pivot * min_pivot < 1e-13 {
        return Err(Error::SingularInformation);
    }
    Cholesky::new(k.clone()).ok_or(Error::SingularInformation)
}

/// `sqrt(diag(K⁻¹))`
pub(crate) fn std_errors(chol: &Cholesky<f64, Dyn>) -> DVector<f64> {
    chol.inverse().diagonal().map(|v| v.max(0.0).sqrt())
}
