//! Scalar mean functions `f(x, α)` with analytic gradient and Hessian in α.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait MeanFunction: Send + Sync + fmt::Debug {
    fn n_params(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (1..=self.n_params()).map(|r| format!("alpha{r}")).collect()
    }

    fn value(&self, x: &[f64], alpha: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64], alpha: &[f64]) -> DVector<f64>;

    fn hessian(&self, x: &[f64], alpha: &[f64]) -> DMatrix<f64>;

    /// Rough starting value from data, refined later by least squares.
    fn start(&self, _xs: &[&[f64]], _ys: &[f64]) -> Option<DVector<f64>> {
        None
    }
}

/// `f(x, α) = xᵀα`.
#[derive(Clone, Debug)]
pub struct LinearMean {
    pub k: usize,
}

impl LinearMean {
    pub fn new(k: usize) -> Self {
        Self { k }
    }
}

impl MeanFunction for LinearMean {
    fn n_params(&self) -> usize {
        self.k
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.k).map(|r| format!("beta{r}")).collect()
    }

    fn value(&self, x: &[f64], alpha: &[f64]) -> Result<f64> {
        if x.len() != self.k {
            return Err(Error::Dimension(format!(
                "linear mean expects {} covariates, got {}",
                self.k,
                x.len()
            )));
        }
        Ok(x.iter().zip(alpha).map(|(a, b)| a * b).sum())
    }

    fn gradient(&self, x: &[f64], _alpha: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn hessian(&self, _x: &[f64], _alpha: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.k, self.k)
    }

    fn start(&self, xs: &[&[f64]], ys: &[f64]) -> Option<DVector<f64>> {
        let n = ys.len();
        let x = DMatrix::from_fn(n, self.k, |i, j| xs[i][j]);
        let y = DVector::from_column_slice(ys);
        (x.transpose() * &x).lu().solve(&(x.transpose() * y))
    }
}

/// `f(x, α) = α₁ + α₂ / (1 + α₃ x^{α₄})` for scalar `x ≥ 0`.
#[derive(Clone, Debug, Default)]
pub struct LogisticMean;

impl LogisticMean {
    /// `(E, L, D) = (x^{α₄}, ln x, 1 + α₃E)`; `L` is irrelevant (set to 0) at `x = 0`.
    fn parts(x: f64, alpha: &[f64]) -> (f64, f64, f64) {
        if x == 0.0 {
            return (0.0, 0.0, 1.0);
        }
        let e = x.powf(alpha[3]);
        (e, x.ln(), 1.0 + alpha[2] * e)
    }
}

impl MeanFunction for LogisticMean {
    fn n_params(&self) -> usize {
        4
    }

    fn value(&self, x: &[f64], alpha: &[f64]) -> Result<f64> {
        let x0 = *x
            .first()
            .ok_or_else(|| Error::Dimension("logistic mean needs one covariate".into()))?;
        if x0 < 0.0 {
            return Err(Error::Domain(format!("logistic mean needs x >= 0, got {x0}")));
        }
        let (_, _, d) = Self::parts(x0, alpha);
        Ok(alpha[0] + alpha[1] / d)
    }

    fn gradient(&self, x: &[f64], alpha: &[f64]) -> DVector<f64> {
        let (e, l, d) = Self::parts(x[0], alpha);
        let (a2, a3) = (alpha[1], alpha[2]);
        let d2 = d * d;
        DVector::from_column_slice(&[1.0, 1.0 / d, -a2 * e / d2, -a2 * a3 * e * l / d2])
    }

    fn hessian(&self, x: &[f64], alpha: &[f64]) -> DMatrix<f64> {
        let (e, l, d) = Self::parts(x[0], alpha);
        let (a2, a3) = (alpha[1], alpha[2]);
        let (d2, d3) = (d * d, d * d * d);
        let mut h = DMatrix::zeros(4, 4);
        h[(1, 2)] = -e / d2;
        h[(1, 3)] = -a3 * e * l / d2;
        h[(2, 2)] = 2.0 * a2 * e * e / d3;
        h[(2, 3)] = -a2 * e * l / d2 + 2.0 * a2 * a3 * e * e * l / d3;
        h[(3, 3)] = -a2 * a3 * e * l * l / d2 + 2.0 * a2 * a3 * a3 * e * e * l * l / d3;
        for r in 0..4 {
            for s in 0..r {
                h[(r, s)] = h[(s, r)];
            }
        }
        h
    }

    /// Asymptotes from the data range, then `log(α₂/(y − α₁) − 1) = log α₃ + α₄ log x`.
    fn start(&self, xs: &[&[f64]], ys: &[f64]) -> Option<DVector<f64>> {
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if !(range > 0.0) {
            return None;
        }
        let a1 = lo - 0.05 * range;
        let a2 = 1.1 * range;
        let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, &y) in xs.iter().zip(ys) {
            let ratio = a2 / (y - a1) - 1.0;
            if x[0] > 0.0 && ratio > 0.0 {
                let (u, v) = (x[0].ln(), ratio.ln());
                sx += u;
                sy += v;
                sxx += u * u;
                sxy += u * v;
                m += 1.0;
            }
        }
        if m < 2.0 {
            return None;
        }
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        let icpt = (sy - slope * sx) / m;
        if !(slope.is_finite() && icpt.is_finite()) {
            return None;
        }
        Some(DVector::from_column_slice(&[a1, a2, icpt.exp(), slope]))
    }
}

/// `log η(x, α)` for a positive median function `η`.
#[derive(Clone, Debug)]
pub struct LogOf(pub Arc<dyn MeanFunction>);

impl MeanFunction for LogOf {
    fn n_params(&self) -> usize {
        self.0.n_params()
    }

    fn param_names(&self) -> Vec<String> {
        self.0.param_names()
    }

    fn value(&self, x: &[f64], alpha: &[f64]) -> Result<f64> {
        let eta = self.0.value(x, alpha)?;
        if !(eta > 0.0) {
            return Err(Error::Domain(format!("median function must be positive, got {eta}")));
        }
        Ok(eta.ln())
    }

    fn gradient(&self, x: &[f64], alpha: &[f64]) -> DVector<f64> {
        let eta = self.0.value(x, alpha).unwrap_or(f64::NAN);
        self.0.gradient(x, alpha) / eta
    }

    fn hessian(&self, x: &[f64], alpha: &[f64]) -> DMatrix<f64> {
        let eta = self.0.value(x, alpha).unwrap_or(f64::NAN);
        let g = self.0.gradient(x, alpha);
        self.0.hessian(x, alpha) / eta - &g * g.transpose() / (eta * eta)
    }

    /// `ys` are on the log scale; the inner start sees the original scale.
    fn start(&self, xs: &[&[f64]], ys: &[f64]) -> Option<DVector<f64>> {
        let raw: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
        self.0.start(xs, &raw)
    }
}

/// `η(x, α) = exp(xᵀα)`, the usual log-linear median.
#[derive(Clone, Debug)]
pub struct ExpLinear {
    pub k: usize,
}

impl MeanFunction for ExpLinear {
    fn n_params(&self) -> usize {
        self.k
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.k).map(|r| format!("beta{r}")).collect()
    }

    fn value(&self, x: &[f64], alpha: &[f64]) -> Result<f64> {
        Ok(LinearMean::new(self.k).value(x, alpha)?.exp())
    }

    fn gradient(&self, x: &[f64], alpha: &[f64]) -> DVector<f64> {
        let eta = self.value(x, alpha).unwrap_or(f64::NAN);
        DVector::from_column_slice(x) * eta
    }

    fn hessian(&self, x: &[f64], alpha: &[f64]) -> DMatrix<f64> {
        let eta = self.value(x, alpha).unwrap_or(f64::NAN);
        let xv = DVector::from_column_slice(x);
        &xv * xv.transpose() * eta
    }

    /// Least squares of `log y` on `x`: the caller passes medians, so take logs here.
    fn start(&self, xs: &[&[f64]], ys: &[f64]) -> Option<DVector<f64>> {
        let logs: Option<Vec<f64>> = ys.iter().map(|&y| (y > 0.0).then(|| y.ln())).collect();
        LinearMean::new(self.k).start(xs, &logs?)
    }
}
