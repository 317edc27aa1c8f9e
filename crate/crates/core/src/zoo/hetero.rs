//! Univariate heteroscedastic nonlinear regression:
//! `y_i = f(x_i, α) + e_i` with scale `σ_i² = h(ω_iᵀγ)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::DensityFamily;
use crate::model::{ModelSpec, ObservationBlock, Structure};

use super::mean::{LinearMean, LogisticMean, MeanFunction};

/// Scale link `σ² = h(η)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VarianceLink {
    #[default]
    Exp,
    Identity,
}

impl VarianceLink {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp" | "log" => Ok(Self::Exp),
            "identity" | "id" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown variance link '{other}'"))),
        }
    }

    pub fn apply(self, eta: f64) -> f64 {
        match self {
            Self::Exp => eta.exp(),
            Self::Identity => eta,
        }
    }

    pub fn d1(self, eta: f64) -> f64 {
        match self {
            Self::Exp => eta.exp(),
            Self::Identity => 1.0,
        }
    }

    pub fn d2(self, eta: f64) -> f64 {
        match self {
            Self::Exp => eta.exp(),
            Self::Identity => 0.0,
        }
    }
}

/// `ω_i`; an empty weight vector means an intercept-only scale.
pub(crate) fn scale_covariates(obs: &ObservationBlock, p2: usize) -> Result<&[f64]> {
    const ONE: [f64; 1] = [1.0];
    if obs.w.is_empty() && p2 == 1 {
        return Ok(&ONE);
    }
    if obs.w.len() != p2 {
        return Err(Error::Dimension(format!(
            "scale covariates: expected {p2}, got {}",
            obs.w.len()
        )));
    }
    Ok(&obs.w)
}

/// Scale part shared with the log-symmetric model: `σ² = h(ωᵀγ)` and its
/// derivatives with respect to `γ`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ScalePart {
    pub link: VarianceLink,
    pub offset: usize,
    pub p2: usize,
}

impl ScalePart {
    fn eta<'a>(&self, theta: &DVector<f64>, obs: &'a ObservationBlock) -> Result<(f64, &'a [f64])> {
        let w = scale_covariates(obs, self.p2)?;
        let eta = w.iter().enumerate().map(|(k, wk)| wk * theta[self.offset + k]).sum();
        Ok((eta, w))
    }

    pub fn value(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<f64> {
        let (eta, _) = self.eta(theta, obs)?;
        let s2 = self.link.apply(eta);
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::Domain(format!("scale must be positive and finite, got {s2}")));
        }
        Ok(s2)
    }

    pub fn jacobian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        let (eta, w) = self.eta(theta, obs).ok()?;
        let d = self.link.d1(eta);
        let mut out = vec![DMatrix::zeros(1, 1); theta.len()];
        for k in 0..self.p2 {
            out[self.offset + k][(0, 0)] = d * w[k];
        }
        Some(out)
    }

    pub fn hessian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        let p = theta.len();
        let (eta, w) = self.eta(theta, obs).ok()?;
        let d = self.link.d2(eta);
        let mut out = vec![DMatrix::zeros(1, 1); p * p];
        for k in 0..self.p2 {
            for l in 0..self.p2 {
                out[(self.offset + k) * p + self.offset + l][(0, 0)] = d * w[k] * w[l];
            }
        }
        Some(out)
    }

    /// Moment start from squared residuals.
    pub fn start(&self, resid_sq: &[f64], blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        let n = resid_sq.len();
        let mean_sq = resid_sq.iter().sum::<f64>() / n as f64;
        if !(mean_sq > 0.0) {
            return None;
        }
        let ws: Vec<&[f64]> = blocks
            .iter()
            .map(|b| scale_covariates(b, self.p2))
            .collect::<Result<_>>()
            .ok()?;
        let omega = DMatrix::from_fn(n, self.p2, |i, j| ws[i][j]);
        // ln χ²₁ has mean ≈ −1.27
        let target: Vec<f64> = match self.link {
            VarianceLink::Exp => resid_sq.iter().map(|e| (e + 1e-12 * mean_sq).ln() + 1.27).collect(),
            VarianceLink::Identity => resid_sq.to_vec(),
        };
        let ls = (omega.transpose() * &omega)
            .lu()
            .solve(&(omega.transpose() * DVector::from_vec(target)));
        let valid = |g: &DVector<f64>| {
            ws.iter().all(|w| {
                let eta: f64 = w.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                let s2 = self.link.apply(eta);
                s2 > 0.0 && s2.is_finite()
            })
        };
        if let Some(g) = ls.filter(|g| valid(g)) {
            return Some(g);
        }
        // Fall back to a constant scale carried by the first covariate.
        let w0 = ws.iter().map(|w| w[0]).sum::<f64>() / n as f64;
        let mut g = DVector::zeros(self.p2);
        g[0] = match self.link {
            VarianceLink::Exp => mean_sq.ln() / w0,
            VarianceLink::Identity => mean_sq / w0,
        };
        valid(&g).then_some(g)
    }

    pub fn names(&self) -> Vec<String> {
        if self.p2 == 1 && self.link == VarianceLink::Identity {
            vec!["sigma2".into()]
        } else {
            (1..=self.p2).map(|k| format!("gamma{k}")).collect()
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeteroNonlinear {
    pub mean: Arc<dyn MeanFunction>,
    pub link: VarianceLink,
    /// Number of scale parameters `γ`.
    pub p2: usize,
}

impl HeteroNonlinear {
    pub fn new(mean: Arc<dyn MeanFunction>, link: VarianceLink, p2: usize) -> Self {
        Self { mean, link, p2 }
    }

    /// Four-parameter logistic mean with constant scale `σ²` (identity link).
    pub fn logistic() -> Self {
        Self::new(Arc::new(LogisticMean), VarianceLink::Identity, 1)
    }

    pub fn linear(k: usize, link: VarianceLink, p2: usize) -> Self {
        Self::new(Arc::new(LinearMean::new(k)), link, p2)
    }

    pub fn into_model(self, blocks: Vec<ObservationBlock>, family: DensityFamily) -> Result<ModelSpec> {
        ModelSpec::new(Arc::new(self), blocks, family)
    }

    fn p1(&self) -> usize {
        self.mean.n_params()
    }

    fn scale_part(&self) -> ScalePart {
        ScalePart {
            link: self.link,
            offset: self.p1(),
            p2: self.p2,
        }
    }
}

impl Structure for HeteroNonlinear {
    fn n_params(&self) -> usize {
        self.p1() + self.p2
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = self.mean.param_names();
        names.extend(self.scale_part().names());
        names
    }

    fn location(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DVector<f64>> {
        let mu = self.mean.value(&obs.x, &theta.as_slice()[..self.p1()])?;
        Ok(DVector::from_element(1, mu))
    }

    fn scale(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, self.scale_part().value(theta, obs)?))
    }

    fn location_jacobian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        let g = self.mean.gradient(&obs.x, &theta.as_slice()[..self.p1()]);
        let mut out = vec![DVector::zeros(1); theta.len()];
        for (r, gr) in g.iter().enumerate() {
            out[r][0] = *gr;
        }
        Some(out)
    }

    fn location_hessian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        let p = theta.len();
        let p1 = self.p1();
        let h = self.mean.hessian(&obs.x, &theta.as_slice()[..p1]);
        let mut out = vec![DVector::zeros(1); p * p];
        for s in 0..p1 {
            for r in 0..p1 {
                out[s * p + r][0] = h[(s, r)];
            }
        }
        Some(out)
    }

    fn scale_jacobian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        self.scale_part().jacobian(theta, obs)
    }

    fn scale_hessian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        self.scale_part().hessian(theta, obs)
    }

    fn orthogonal_split(&self) -> Option<(usize, usize)> {
        Some((self.p1(), self.p2))
    }

    fn location_start(&self, blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        let xs: Vec<&[f64]> = blocks.iter().map(|b| b.x.as_slice()).collect();
        let ys: Vec<f64> = blocks.iter().map(|b| b.y[0]).collect();
        self.mean.start(&xs, &ys)
    }

    fn scale_start(&self, theta: &DVector<f64>, blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        let alpha = &theta.as_slice()[..self.p1()];
        let resid: Vec<f64> = blocks
            .iter()
            .map(|b| self.mean.value(&b.x, alpha).map(|m| (b.y[0] - m).powi(2)))
            .collect::<Result<_>>()
            .ok()?;
        self.scale_part().start(&resid, blocks)
    }
}
