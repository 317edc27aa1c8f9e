//! Multivariate errors-in-variables regression
//! `x1 = β0 + β1 x2 + q`, with `x1` (`v`-dim) and `x2` (`m`-dim) both observed
//! with known measurement-error covariances `τ1_i`, `τ2_i`.
//!
//! `Y_i = (X1_i, X2_i)` has
//! `μ = (β0 + β1μx, μx)` and
//! `Σ_i = [[β1Σxβ1ᵀ + Σq + τ1_i, β1Σx], [Σxβ1ᵀ, Σx + τ2_i]]`,
//! `θ = (β0, vec β1, μx, vech Σx, vech Σq)`.
//! Per block `w = (vech τ1_i, vech τ2_i)`; an empty `w` means no measurement error.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::DensityFamily;
use crate::linalg::{unvech, vech, vech_len, vech_unit};
use crate::model::{ModelSpec, ObservationBlock, Structure};

#[derive(Clone, Copy, Debug)]
pub struct ErrorsInVariables {
    pub v: usize,
    pub m: usize,
}

/// Parameter-index layout.
#[derive(Clone, Copy, Debug)]
struct Layout {
    v: usize,
    b1: usize,
    mux: usize,
    sx: usize,
    sq: usize,
    p: usize,
}

enum Param {
    Beta0(usize),
    /// `(row j, column l)` of `β1`
    Beta1(usize, usize),
    MuX(usize),
    SigmaX(usize),
    SigmaQ(usize),
}

impl Layout {
    fn new(v: usize, m: usize) -> Self {
        let b1 = v;
        let mux = b1 + v * m;
        let sx = mux + m;
        let sq = sx + vech_len(m);
        Self {
            v,
            b1,
            mux,
            sx,
            sq,
            p: sq + vech_len(v),
        }
    }

    fn param(&self, r: usize) -> Param {
        if r < self.b1 {
            Param::Beta0(r)
        } else if r < self.mux {
            let k = r - self.b1;
            Param::Beta1(k % self.v, k / self.v)
        } else if r < self.sx {
            Param::MuX(r - self.mux)
        } else if r < self.sq {
            Param::SigmaX(r - self.sx)
        } else {
            Param::SigmaQ(r - self.sq)
        }
    }
}

struct Parts {
    beta0: DVector<f64>,
    beta1: DMatrix<f64>,
    mux: DVector<f64>,
    sx: DMatrix<f64>,
    sq: DMatrix<f64>,
}

impl ErrorsInVariables {
    pub fn new(v: usize, m: usize) -> Self {
        Self { v, m }
    }

    pub fn into_model(self, blocks: Vec<ObservationBlock>, family: DensityFamily) -> Result<ModelSpec> {
        ModelSpec::new(Arc::new(self), blocks, family)
    }

    /// Block with `y = (x1, x2)` and measurement-error covariances.
    pub fn observation(x1: &[f64], x2: &[f64], tau1: &DMatrix<f64>, tau2: &DMatrix<f64>) -> ObservationBlock {
        let y = DVector::from_iterator(x1.len() + x2.len(), x1.iter().chain(x2).cloned());
        let w = vech(tau1).iter().chain(vech(tau2).iter()).cloned().collect();
        ObservationBlock::new(y, vec![], w)
    }

    fn layout(&self) -> Layout {
        Layout::new(self.v, self.m)
    }

    fn parts(&self, theta: &DVector<f64>) -> Result<Parts> {
        let l = self.layout();
        let t = theta.as_slice();
        Ok(Parts {
            beta0: DVector::from_column_slice(&t[..l.b1]),
            beta1: DMatrix::from_column_slice(self.v, self.m, &t[l.b1..l.mux]),
            mux: DVector::from_column_slice(&t[l.mux..l.sx]),
            sx: unvech(&t[l.sx..l.sq], self.m)?,
            sq: unvech(&t[l.sq..l.p], self.v)?,
        })
    }

    fn taus(&self, obs: &ObservationBlock) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (v, m) = (self.v, self.m);
        if obs.q() != v + m {
            return Err(Error::Dimension(format!(
                "errors-in-variables block must have {} responses, got {}",
                v + m,
                obs.q()
            )));
        }
        if obs.w.is_empty() {
            return Ok((DMatrix::zeros(v, v), DMatrix::zeros(m, m)));
        }
        if obs.w.len() != vech_len(v) + vech_len(m) {
            return Err(Error::Dimension(format!(
                "errors-in-variables weights must hold vech(tau1), vech(tau2): expected {}, got {}",
                vech_len(v) + vech_len(m),
                obs.w.len()
            )));
        }
        let (a, b) = obs.w.split_at(vech_len(v));
        Ok((unvech(a, v)?, unvech(b, m)?))
    }

    fn unit(&self, j: usize, l: usize) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.v, self.m);
        e[(j, l)] = 1.0;
        e
    }

    /// Assembles `[[a, b], [bᵀ, d]]`.
    fn blocks(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
        let (v, m) = (self.v, self.m);
        let mut out = DMatrix::zeros(v + m, v + m);
        out.view_mut((0, 0), (v, v)).copy_from(a);
        out.view_mut((0, v), (v, m)).copy_from(b);
        out.view_mut((v, 0), (m, v)).copy_from(&b.transpose());
        out.view_mut((v, v), (m, m)).copy_from(d);
        out
    }

    fn stack(&self, top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.v + self.m, top.iter().chain(bottom.iter()).cloned())
    }

    fn d_location(&self, pp: &Parts, r: usize) -> DVector<f64> {
        let (v, m) = (self.v, self.m);
        match self.layout().param(r) {
            Param::Beta0(k) => {
                let mut a = DVector::zeros(v + m);
                a[k] = 1.0;
                a
            }
            Param::Beta1(j, l) => {
                let mut a = DVector::zeros(v + m);
                a[j] = pp.mux[l];
                a
            }
            Param::MuX(l) => self.stack(&pp.beta1.column(l).into_owned(), &unit_vec(m, l)),
            Param::SigmaX(_) | Param::SigmaQ(_) => DVector::zeros(v + m),
        }
    }

    fn d_scale(&self, pp: &Parts, r: usize) -> DMatrix<f64> {
        let (v, m) = (self.v, self.m);
        let b1 = &pp.beta1;
        match self.layout().param(r) {
            Param::Beta0(_) | Param::MuX(_) => DMatrix::zeros(v + m, v + m),
            Param::Beta1(j, l) => {
                let e = self.unit(j, l);
                let es = &e * &pp.sx;
                let a = &es * b1.transpose() + b1 * es.transpose();
                self.blocks(&a, &es, &DMatrix::zeros(m, m))
            }
            Param::SigmaX(k) => {
                let g = vech_unit(k, m);
                let bg = b1 * &g;
                self.blocks(&(&bg * b1.transpose()), &bg, &g)
            }
            Param::SigmaQ(k) => self.blocks(&vech_unit(k, v), &DMatrix::zeros(v, m), &DMatrix::zeros(m, m)),
        }
    }

    fn d2_location(&self, s: usize, r: usize) -> DVector<f64> {
        let l = self.layout();
        let mut a = DVector::zeros(self.v + self.m);
        match (l.param(s), l.param(r)) {
            (Param::Beta1(j, c), Param::MuX(k)) | (Param::MuX(k), Param::Beta1(j, c)) if c == k => {
                a[j] = 1.0;
            }
            _ => {}
        }
        a
    }

    fn d2_scale(&self, pp: &Parts, s: usize, r: usize) -> DMatrix<f64> {
        let (v, m) = (self.v, self.m);
        let l = self.layout();
        let zero_b = DMatrix::zeros(v, m);
        let zero_d = DMatrix::zeros(m, m);
        match (l.param(s), l.param(r)) {
            (Param::Beta1(j1, l1), Param::Beta1(j2, l2)) => {
                let (e1, e2) = (self.unit(j1, l1), self.unit(j2, l2));
                let a = &e1 * &pp.sx * e2.transpose() + &e2 * &pp.sx * e1.transpose();
                self.blocks(&a, &zero_b, &zero_d)
            }
            (Param::Beta1(j, c), Param::SigmaX(k)) | (Param::SigmaX(k), Param::Beta1(j, c)) => {
                let e = self.unit(j, c);
                let eg = &e * vech_unit(k, m);
                let a = &eg * pp.beta1.transpose() + &pp.beta1 * eg.transpose();
                self.blocks(&a, &eg, &zero_d)
            }
            _ => DMatrix::zeros(v + m, v + m),
        }
    }
}

fn unit_vec(n: usize, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[k] = 1.0;
    e
}

impl Structure for ErrorsInVariables {
    fn n_params(&self) -> usize {
        self.layout().p
    }

    fn param_names(&self) -> Vec<String> {
        let (v, m) = (self.v, self.m);
        let sub = |n: usize, i: usize| if n == 1 { String::new() } else { format!("{}", i + 1) };
        let mut names: Vec<String> = (0..v).map(|j| format!("beta0{}", sub(v, j))).collect();
        for l in 0..m {
            for j in 0..v {
                let idx = if v * m == 1 {
                    String::new()
                } else {
                    format!("{}{}", j + 1, l + 1)
                };
                names.push(format!("beta1{idx}"));
            }
        }
        names.extend((0..m).map(|l| format!("mu_x{}", sub(m, l))));
        let vech_names = |prefix: &str, n: usize| -> Vec<String> {
            let mut out = Vec::new();
            for j in 0..n {
                for i in 0..=j {
                    out.push(if n == 1 {
                        prefix.to_string()
                    } else {
                        format!("{prefix}{}{}", i + 1, j + 1)
                    });
                }
            }
            out
        };
        names.extend(vech_names("sigma_x", m));
        names.extend(vech_names("sigma_q", v));
        names
    }

    fn location(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DVector<f64>> {
        self.taus(obs)?;
        let pp = self.parts(theta)?;
        Ok(self.stack(&(&pp.beta0 + &pp.beta1 * &pp.mux), &pp.mux))
    }

    fn scale(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DMatrix<f64>> {
        let (t1, t2) = self.taus(obs)?;
        let pp = self.parts(theta)?;
        if pp.sx.clone().cholesky().is_none() || pp.sq.clone().cholesky().is_none() {
            return Err(Error::Domain("Sigma_x and Sigma_q must be positive definite".into()));
        }
        let b = &pp.beta1 * &pp.sx;
        let a = &b * pp.beta1.transpose() + &pp.sq + t1;
        Ok(self.blocks(&a, &b, &(&pp.sx + t2)))
    }

    fn location_jacobian(&self, theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        let pp = self.parts(theta).ok()?;
        Some((0..theta.len()).map(|r| self.d_location(&pp, r)).collect())
    }

    fn location_hessian(&self, theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        let p = theta.len();
        Some((0..p * p).map(|k| self.d2_location(k / p, k % p)).collect())
    }

    fn scale_jacobian(&self, theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        let pp = self.parts(theta).ok()?;
        Some((0..theta.len()).map(|r| self.d_scale(&pp, r)).collect())
    }

    fn scale_hessian(&self, theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        let p = theta.len();
        let pp = self.parts(theta).ok()?;
        Some((0..p * p).map(|k| self.d2_scale(&pp, k / p, k % p)).collect())
    }

    /// Method-of-moments start: sample moments corrected for the average
    /// measurement-error covariances.
    fn initial_guess(&self, blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        let (v, m) = (self.v, self.m);
        let n = blocks.len() as f64;
        let qd = v + m;
        let mut mean = DVector::zeros(qd);
        let mut t1 = DMatrix::zeros(v, v);
        let mut t2 = DMatrix::zeros(m, m);
        for b in blocks {
            mean += &b.y;
            let (a, c) = self.taus(b).ok()?;
            t1 += a;
            t2 += c;
        }
        mean /= n;
        t1 /= n;
        t2 /= n;
        let mut s = DMatrix::zeros(qd, qd);
        for b in blocks {
            let d = &b.y - &mean;
            s += &d * d.transpose();
        }
        s /= n;
        let s11 = s.view((0, 0), (v, v)).into_owned();
        let s12 = s.view((0, v), (v, m)).into_owned();
        let s22 = s.view((v, v), (m, m)).into_owned();
        let mut sx = &s22 - t2;
        if sx.clone().cholesky().is_none() {
            sx = s22.clone() * 0.5;
        }
        let sx_inv = sx.clone().try_inverse()?;
        let beta1 = &s12 * sx_inv;
        let mux = mean.rows(v, m).into_owned();
        let beta0 = mean.rows(0, v) - &beta1 * &mux;
        let mut sq = s11 - &beta1 * &sx * beta1.transpose() - t1;
        if sq.clone().cholesky().is_none() {
            let floor = 0.1 * s.view((0, 0), (v, v)).diagonal().mean().max(1e-8);
            sq = DMatrix::identity(v, v) * floor;
        }
        let mut out: Vec<f64> = beta0.iter().cloned().collect();
        out.extend(beta1.iter());
        out.extend(mux.iter());
        out.extend(vech(&sx).iter());
        out.extend(vech(&sq).iter());
        Some(DVector::from_vec(out))
    }
}
