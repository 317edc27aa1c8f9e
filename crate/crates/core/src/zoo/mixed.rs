//! Elliptical nonlinear mixed-effects model: the `q_i` responses of unit `i`
//! satisfy `y_ij = f(x_ij, α) + z_ijᵀb_i + e_ij`, marginally
//! `Σ_i = Z_i Σ_b Z_iᵀ + σ² I`.
//!
//! Data layout per block: `x` holds the `q_i × k` covariate rows and `w` the
//! `q_i × r` random-effects design rows, both row-major.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::DensityFamily;
use crate::linalg::{unvech, vech, vech_len, vech_unit};
use crate::model::{ModelSpec, ObservationBlock, Structure};

use super::mean::{LinearMean, MeanFunction};

#[derive(Clone, Debug)]
pub struct MixedEffects {
    pub mean: Arc<dyn MeanFunction>,
    /// Covariates per response row.
    pub k: usize,
    /// Random-effects dimension; 0 gives independent errors.
    pub r: usize,
}

impl MixedEffects {
    pub fn new(mean: Arc<dyn MeanFunction>, k: usize, r: usize) -> Self {
        Self { mean, k, r }
    }

    pub fn linear(k: usize, r: usize) -> Self {
        Self::new(Arc::new(LinearMean::new(k)), k, r)
    }

    pub fn into_model(self, blocks: Vec<ObservationBlock>, family: DensityFamily) -> Result<ModelSpec> {
        ModelSpec::new(Arc::new(self), blocks, family)
    }

    fn p1(&self) -> usize {
        self.mean.n_params()
    }

    fn nb(&self) -> usize {
        vech_len(self.r)
    }

    fn rows<'a>(&self, obs: &'a ObservationBlock) -> Result<Vec<&'a [f64]>> {
        let q = obs.q();
        if obs.x.len() != q * self.k {
            return Err(Error::Dimension(format!(
                "mixed model: x needs {q}x{} entries, got {}",
                self.k,
                obs.x.len()
            )));
        }
        Ok(obs.x.chunks(self.k.max(1)).take(q).collect())
    }

    fn z(&self, obs: &ObservationBlock) -> Result<DMatrix<f64>> {
        let q = obs.q();
        if obs.w.len() != q * self.r {
            return Err(Error::Dimension(format!(
                "mixed model: Z needs {q}x{} entries, got {}",
                self.r,
                obs.w.len()
            )));
        }
        Ok(DMatrix::from_row_slice(q, self.r, &obs.w))
    }

    fn sigma_b(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p1 = self.p1();
        let sb = unvech(&theta.as_slice()[p1..p1 + self.nb()], self.r)?;
        if self.r > 0 && sb.clone().cholesky().is_none() {
            return Err(Error::LinAlg(
                "random-effects covariance is not positive definite".into(),
            ));
        }
        Ok(sb)
    }
}

impl Structure for MixedEffects {
    fn n_params(&self) -> usize {
        self.p1() + self.nb() + 1
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = self.mean.param_names();
        for j in 0..self.r {
            for i in 0..=j {
                names.push(format!("sigma_b{}{}", i + 1, j + 1));
            }
        }
        names.push("sigma2".into());
        names
    }

    fn location(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DVector<f64>> {
        let alpha = &theta.as_slice()[..self.p1()];
        let mu = self
            .rows(obs)?
            .iter()
            .map(|x| self.mean.value(x, alpha))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(mu))
    }

    fn scale(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DMatrix<f64>> {
        let s2 = theta[theta.len() - 1];
        if !(s2 > 0.0) {
            return Err(Error::LinAlg(format!("error variance must be positive, got {s2}")));
        }
        let z = self.z(obs)?;
        let sb = self.sigma_b(theta)?;
        Ok(&z * sb * z.transpose() + DMatrix::identity(obs.q(), obs.q()) * s2)
    }

    fn location_jacobian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        let p1 = self.p1();
        let alpha = &theta.as_slice()[..p1];
        let rows = self.rows(obs).ok()?;
        let mut out = vec![DVector::zeros(obs.q()); theta.len()];
        for (j, x) in rows.iter().enumerate() {
            let g = self.mean.gradient(x, alpha);
            for r in 0..p1 {
                out[r][j] = g[r];
            }
        }
        Some(out)
    }

    fn location_hessian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        let p = theta.len();
        let p1 = self.p1();
        let alpha = &theta.as_slice()[..p1];
        let rows = self.rows(obs).ok()?;
        let mut out = vec![DVector::zeros(obs.q()); p * p];
        for (j, x) in rows.iter().enumerate() {
            let h = self.mean.hessian(x, alpha);
            for s in 0..p1 {
                for r in 0..p1 {
                    out[s * p + r][j] = h[(s, r)];
                }
            }
        }
        Some(out)
    }

    fn scale_jacobian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        let q = obs.q();
        let p1 = self.p1();
        let z = self.z(obs).ok()?;
        let mut out = vec![DMatrix::zeros(q, q); theta.len()];
        for k in 0..self.nb() {
            out[p1 + k] = &z * vech_unit(k, self.r) * z.transpose();
        }
        out[theta.len() - 1] = DMatrix::identity(q, q);
        Some(out)
    }

    fn scale_hessian(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        let p = theta.len();
        Some(vec![DMatrix::zeros(obs.q(), obs.q()); p * p])
    }

    fn orthogonal_split(&self) -> Option<(usize, usize)> {
        Some((self.p1(), self.nb() + 1))
    }

    fn location_start(&self, blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for b in blocks {
            for (j, x) in self.rows(b).ok()?.into_iter().enumerate() {
                xs.push(x);
                ys.push(b.y[j]);
            }
        }
        self.mean.start(&xs, &ys)
    }

    /// Splits the residual variance evenly between the random effects and the error.
    fn scale_start(&self, theta: &DVector<f64>, blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        let alpha = &theta.as_slice()[..self.p1()];
        let (mut ss, mut m) = (0.0, 0.0);
        let mut zsq = vec![0.0; self.r];
        for b in blocks {
            for (j, x) in self.rows(b).ok()?.into_iter().enumerate() {
                ss += (b.y[j] - self.mean.value(x, alpha).ok()?).powi(2);
                m += 1.0;
                for (c, z) in zsq.iter_mut().enumerate() {
                    *z += b.w[j * self.r + c].powi(2);
                }
            }
        }
        let s2 = ss / m;
        if !(s2 > 0.0) {
            return None;
        }
        let frac = if self.r == 0 { 1.0 } else { 0.5 };
        let sb = DMatrix::from_fn(self.r, self.r, |i, j| {
            if i == j {
                (1.0 - frac) * s2 / (self.r as f64 * (zsq[i] / m).max(1e-12))
            } else {
                0.0
            }
        });
        let mut out: Vec<f64> = vech(&sb).iter().cloned().collect();
        out.push(frac * s2);
        Some(DVector::from_vec(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks() -> Vec<ObservationBlock> {
        (0..6)
            .map(|i| {
                let q = 3 + i % 2;
                let t: Vec<f64> = (0..q).map(|j| j as f64).collect();
                let y = DVector::from_iterator(q, t.iter().map(|tj| 1.0 + 0.5 * tj + (i as f64 * 0.7 + tj).sin()));
                let x: Vec<f64> = t.iter().flat_map(|tj| [1.0, *tj]).collect();
                let z = x.clone();
                ObservationBlock::new(y, x, z)
            })
            .collect()
    }

    #[test]
    fn derivatives_and_names() {
        let m = MixedEffects::linear(2, 2)
            .into_model(blocks(), DensityFamily::normal())
            .unwrap();
        assert_eq!(
            m.param_names(),
            ["beta0", "beta1", "sigma_b11", "sigma_b12", "sigma_b22", "sigma2"]
        );
        let theta = DVector::from_column_slice(&[1.0, 0.5, 0.8, 0.1, 0.3, 0.4]);
        let d = m.derivative_discrepancy(&theta).unwrap();
        assert!(d.first < 1e-6 && d.second < 1e-4, "{d:?}");
        let s = m.scale(&theta, 0).unwrap();
        // Var(y_i0) = σ_b11 + σ²
        assert!((s[(0, 0)] - 1.2).abs() < 1e-14);
    }

    #[test]
    fn random_effects_must_be_pd() {
        let m = MixedEffects::linear(2, 2)
            .into_model(blocks(), DensityFamily::normal())
            .unwrap();
        let theta = DVector::from_column_slice(&[1.0, 0.5, 0.1, 0.5, 0.1, 0.4]);
        assert!(matches!(m.scale(&theta, 0), Err(Error::LinAlg(_))));
    }

    #[test]
    fn no_random_effects_is_iid() {
        let b: Vec<_> = blocks()
            .into_iter()
            .map(|b| ObservationBlock::new(b.y, b.x, vec![]))
            .collect();
        let m = MixedEffects::linear(2, 0)
            .into_model(b, DensityFamily::normal())
            .unwrap();
        let s = m.scale(&DVector::from_column_slice(&[0.0, 0.0, 2.0]), 1).unwrap();
        assert_eq!(s, DMatrix::identity(4, 4) * 2.0);
    }
}
