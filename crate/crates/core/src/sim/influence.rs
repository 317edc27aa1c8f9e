use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{fit, EstimatorSet, FitOptions};
use crate::model::ModelSpec;

/// `D̂ = Σ_j |Ŷ − Ŷ_(j)|²` over leave-one-out refits.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceStat {
    pub value: f64,
    /// Contribution of each deletion; NaN where the refit failed.
    pub per_case: Vec<f64>,
    /// Deleted cases whose refit failed or did not converge (excluded from `value`).
    pub failed: Vec<usize>,
}

fn predictions(model: &ModelSpec, theta: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    (0..model.n_obs()).map(|i| model.location(theta, i)).collect()
}

/// Refits `estimator` (`mle`, `bc` or `br`) without each observation in turn,
/// starting from `theta_est`, and sums the squared shifts of the fitted
/// locations over the full design.
pub fn d_hat(model: &ModelSpec, theta_est: &DVector<f64>, estimator: &str, opts: &FitOptions) -> Result<InfluenceStat> {
    let set = match estimator {
        "mle" => EstimatorSet::MLE,
        "bc" => EstimatorSet {
            mle: true,
            bc: true,
            br: false,
        },
        "br" => EstimatorSet {
            mle: false,
            bc: false,
            br: true,
        },
        other => return Err(Error::Config(format!("unknown estimator '{other}'"))),
    };
    if model.n_obs() < 2 {
        return Err(Error::Config("leave-one-out needs at least two observations".into()));
    }
    let full = predictions(model, theta_est)?;
    let opts = opts.clone().with_start(theta_est.clone()).with_estimators(set);
    let per_case: Vec<Option<f64>> = (0..model.n_obs())
        .into_par_iter()
        .map(|j| {
            let sub = model.without(j).ok()?;
            let res = fit(&sub, &opts).ok()?;
            let est = res.estimate(estimator).filter(|e| e.converged)?;
            let shifted = predictions(model, &est.theta).ok()?;
            Some(full.iter().zip(&shifted).map(|(a, b)| (a - b).norm_squared()).sum())
        })
        .collect();
    let failed: Vec<usize> = per_case
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.is_none().then_some(j))
        .collect();
    Ok(InfluenceStat {
        value: per_case.iter().flatten().sum(),
        per_case: per_case.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        failed,
    })
}
