use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub aicc: f64,
}

/// AIC, BIC and the small-sample AICc for a log-likelihood `loglik` of a
/// `p`-parameter model fitted to `n` observations.
pub fn information_criteria(loglik: f64, n: usize, p: usize) -> Result<InformationCriteria> {
    if !loglik.is_finite() {
        return Err(Error::Domain("log-likelihood is not finite".into()));
    }
    if n <= p + 1 {
        return Err(Error::Domain(format!("AICc needs n > p + 1 (n = {n}, p = {p})")));
    }
    let (nf, pf) = (n as f64, p as f64);
    let aic = -2.0 * loglik + 2.0 * pf;
    Ok(InformationCriteria {
        aic,
        bic: -2.0 * loglik + pf * nf.ln(),
        aicc: aic + 2.0 * pf * (pf + 1.0) / (nf - pf - 1.0),
    })
}
