//! General elliptical regression model: `Y_i ~ El_{q_i}(μ_i(θ), Σ_i(θ))`.
//!
//! A [`Structure`] supplies `μ_i`, `Σ_i` and (optionally) their first and
//! second derivatives. Missing derivatives are replaced by central finite
//! differences. [`ModelSpec`] binds a structure to data and a density family.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{DensityFamily, PsiMoments};
use crate::linalg;

/// One observed response vector with its auxiliary variables.
///
/// `x` feeds the location function and `w` the scale function; both are
/// flattened and interpreted by the [`Structure`] that owns them.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBlock {
    pub y: DVector<f64>,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl ObservationBlock {
    pub fn new(y: DVector<f64>, x: Vec<f64>, w: Vec<f64>) -> Self {
        Self { y, x, w }
    }

    pub fn scalar(y: f64, x: Vec<f64>, w: Vec<f64>) -> Self {
        Self::new(DVector::from_element(1, y), x, w)
    }

    pub fn q(&self) -> usize {
        self.y.len()
    }
}

/// Location and scale functions of a model.
///
/// Derivative methods return `None` when not implemented analytically.
/// Index conventions: `location_jacobian()[r] = ∂μ/∂θ_r`,
/// `location_hessian()[s * p + r] = ∂²μ/∂θ_s∂θ_r`, likewise for the scale.
pub trait Structure: Send + Sync + fmt::Debug {
    fn n_params(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (1..=self.n_params()).map(|r| format!("theta{r}")).collect()
    }

    fn location(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DVector<f64>>;

    fn scale(&self, theta: &DVector<f64>, obs: &ObservationBlock) -> Result<DMatrix<f64>>;

    fn location_jacobian(&self, _theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        None
    }

    fn location_hessian(&self, _theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
        None
    }

    fn scale_jacobian(&self, _theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    fn scale_hessian(&self, _theta: &DVector<f64>, _obs: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    /// `(p1, p2)` when `μ` depends only on the first `p1` parameters and `Σ`
    /// only on the remaining `p2`.
    fn orthogonal_split(&self) -> Option<(usize, usize)> {
        None
    }

    /// Start for the location parameters (the first `p1` entries of θ, or all
    /// of θ) used by the fitting heuristic.
    fn location_start(&self, _blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        None
    }

    /// Moment estimate of the scale parameters given the location part of
    /// `theta`; either the trailing `p − p1` entries or a full θ.
    fn scale_start(&self, _theta: &DVector<f64>, _blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        None
    }

    /// Full start vector, for structures that know a better one than the generic heuristic.
    fn initial_guess(&self, _blocks: &[ObservationBlock]) -> Option<DVector<f64>> {
        None
    }
}

/// First (and optionally second) derivatives of `μ_i` and `Σ_i` at one θ.
#[derive(Clone, Debug)]
pub struct Derivatives {
    /// `a_{i(r)}`
    pub a: Vec<DVector<f64>>,
    /// `C_{i(r)}`
    pub c: Vec<DMatrix<f64>>,
    /// `a_{i(sr)}` at index `s * p + r`; empty when not requested.
    pub a2: Vec<DVector<f64>>,
    /// `C_{i(sr)}` at index `s * p + r`; empty when not requested.
    pub c2: Vec<DMatrix<f64>>,
}

/// Worst relative discrepancy between analytic and finite-difference derivatives.
#[derive(Clone, Copy, Debug, Default)]
pub struct DerivativeCheck {
    pub first: f64,
    pub second: f64,
}

/// A structure bound to data and an elliptical family.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    structure: Arc<dyn Structure>,
    blocks: Vec<ObservationBlock>,
    family: DensityFamily,
    constants: BTreeMap<usize, PsiMoments>,
}

const FIRST_STEP: f64 = 1e-6;
const SECOND_STEP: f64 = 1e-4;

fn rel_diff(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / (scale.max(1e-8))
}

impl ModelSpec {
    pub fn new(structure: Arc<dyn Structure>, blocks: Vec<ObservationBlock>, family: DensityFamily) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Dimension("model needs at least one observation".into()));
        }
        if structure.n_params() == 0 {
            return Err(Error::Dimension("model needs at least one parameter".into()));
        }
        if let Some((p1, p2)) = structure.orthogonal_split() {
            if p1 + p2 != structure.n_params() {
                return Err(Error::Split(format!(
                    "split ({p1}, {p2}) does not add up to p = {}",
                    structure.n_params()
                )));
            }
        }
        let mut constants = BTreeMap::new();
        for (i, b) in blocks.iter().enumerate() {
            linalg::check_block_dim(b.q())?;
            if !b.y.iter().all(|v| v.is_finite()) {
                return Err(Error::Domain(format!("observation {i} has non-finite y")));
            }
            if let std::collections::btree_map::Entry::Vacant(e) = constants.entry(b.q()) {
                e.insert(family.derived_constants(b.q())?);
            }
        }
        Ok(Self {
            structure,
            blocks,
            family,
            constants,
        })
    }

    /// Same structure and family on a different data set.
    pub fn with_blocks(&self, blocks: Vec<ObservationBlock>) -> Result<Self> {
        Self::new(self.structure.clone(), blocks, self.family.clone())
    }

    pub fn with_family(&self, family: DensityFamily) -> Result<Self> {
        Self::new(self.structure.clone(), self.blocks.clone(), family)
    }

    /// Replaces the responses, keeping covariates.
    pub fn with_responses(&self, ys: Vec<DVector<f64>>) -> Result<Self> {
        if ys.len() != self.blocks.len() {
            return Err(Error::Dimension(format!(
                "expected {} responses, got {}",
                self.blocks.len(),
                ys.len()
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(ys)
            .map(|(b, y)| ObservationBlock::new(y, b.x.clone(), b.w.clone()))
            .collect();
        Ok(Self {
            structure: self.structure.clone(),
            blocks,
            family: self.family.clone(),
            constants: self.constants.clone(),
        })
    }

    /// Drops observation `j`.
    pub fn without(&self, j: usize) -> Result<Self> {
        let mut blocks = self.blocks.clone();
        blocks.remove(j);
        self.with_blocks(blocks)
    }

    pub fn structure(&self) -> &Arc<dyn Structure> {
        &self.structure
    }

    pub fn blocks(&self) -> &[ObservationBlock] {
        &self.blocks
    }

    pub fn family(&self) -> &DensityFamily {
        &self.family
    }

    pub fn n_obs(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_params(&self) -> usize {
        self.structure.n_params()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.structure.param_names()
    }

    pub fn orthogonal_split(&self) -> Option<(usize, usize)> {
        self.structure.orthogonal_split()
    }

    pub fn constants(&self, q: usize) -> &PsiMoments {
        &self.constants[&q]
    }

    pub fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "theta has length {}, model has {} parameters",
                theta.len(),
                self.n_params()
            )));
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("theta has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn location(&self, theta: &DVector<f64>, i: usize) -> Result<DVector<f64>> {
        let mu = self.structure.location(theta, &self.blocks[i])?;
        if mu.len() != self.blocks[i].q() {
            return Err(Error::Dimension(format!(
                "location of observation {i} has length {}, expected {}",
                mu.len(),
                self.blocks[i].q()
            )));
        }
        Ok(mu)
    }

    pub fn scale(&self, theta: &DVector<f64>, i: usize) -> Result<DMatrix<f64>> {
        let s = self.structure.scale(theta, &self.blocks[i])?;
        let q = self.blocks[i].q();
        if s.nrows() != q || s.ncols() != q {
            return Err(Error::Dimension(format!(
                "scale of observation {i} is {}x{}, expected {q}x{q}",
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(s)
    }

    /// True when the structure provides every derivative analytically.
    pub fn has_analytic_derivatives(&self) -> bool {
        let theta = DVector::zeros(self.n_params());
        let b = &self.blocks[0];
        let s = &self.structure;
        s.location_jacobian(&theta, b).is_some()
            && s.scale_jacobian(&theta, b).is_some()
            && s.location_hessian(&theta, b).is_some()
            && s.scale_hessian(&theta, b).is_some()
    }

    /// Derivatives of `μ_i` and `Σ_i`; second derivatives only when `second` is set.
    pub fn derivatives(&self, theta: &DVector<f64>, i: usize, second: bool) -> Result<Derivatives> {
        let obs = &self.blocks[i];
        let s = &self.structure;
        let p = self.n_params();
        let a = match s.location_jacobian(theta, obs) {
            Some(a) => a,
            None => self.fd_location_jacobian(theta, i, 1.0)?,
        };
        let c = match s.scale_jacobian(theta, obs) {
            Some(c) => c,
            None => self.fd_scale_jacobian(theta, i, 1.0)?,
        };
        if a.len() != p || c.len() != p {
            return Err(Error::Dimension("derivative list length differs from p".into()));
        }
        let (a2, c2) = if second {
            let a2 = match s.location_hessian(theta, obs) {
                Some(a2) => a2,
                None => self.fd_location_hessian(theta, i, 1.0)?,
            };
            let c2 = match s.scale_hessian(theta, obs) {
                Some(c2) => c2,
                None => self.fd_scale_hessian(theta, i, 1.0)?,
            };
            if a2.len() != p * p || c2.len() != p * p {
                return Err(Error::Dimension(
                    "second derivative list length differs from p*p".into(),
                ));
            }
            (a2, c2)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Derivatives { a, c, a2, c2 })
    }

    /// `∂μ_i/∂θ_r` for all r, without touching the scale function.
    pub fn location_jacobian(&self, theta: &DVector<f64>, i: usize) -> Result<Vec<DVector<f64>>> {
        match self.structure.location_jacobian(theta, &self.blocks[i]) {
            Some(a) => Ok(a),
            None => self.fd_location_jacobian(theta, i, 1.0),
        }
    }

    fn step(theta: &DVector<f64>, r: usize, base: f64) -> f64 {
        base * (1.0 + theta[r].abs())
    }

    fn shifted(theta: &DVector<f64>, moves: &[(usize, f64)]) -> DVector<f64> {
        let mut t = theta.clone();
        for &(r, h) in moves {
            t[r] += h;
        }
        t
    }

    fn fd_location_jacobian(&self, theta: &DVector<f64>, i: usize, refine: f64) -> Result<Vec<DVector<f64>>> {
        (0..self.n_params())
            .map(|r| {
                let h = Self::step(theta, r, FIRST_STEP) * refine;
                let up = self.location(&Self::shifted(theta, &[(r, h)]), i)?;
                let dn = self.location(&Self::shifted(theta, &[(r, -h)]), i)?;
                Ok((up - dn) / (2.0 * h))
            })
            .collect()
    }

    fn fd_scale_jacobian(&self, theta: &DVector<f64>, i: usize, refine: f64) -> Result<Vec<DMatrix<f64>>> {
        (0..self.n_params())
            .map(|r| {
                let h = Self::step(theta, r, FIRST_STEP) * refine;
                let up = self.scale(&Self::shifted(theta, &[(r, h)]), i)?;
                let dn = self.scale(&Self::shifted(theta, &[(r, -h)]), i)?;
                Ok((up - dn) / (2.0 * h))
            })
            .collect()
    }

    fn fd_location_hessian(&self, theta: &DVector<f64>, i: usize, refine: f64) -> Result<Vec<DVector<f64>>> {
        let p = self.n_params();
        let obs = &self.blocks[i];
        let analytic_first = self.structure.location_jacobian(theta, obs).is_some();
        let mut out = vec![DVector::zeros(obs.q()); p * p];
        for s in 0..p {
            let hs = Self::step(theta, s, SECOND_STEP) * refine;
            if analytic_first {
                let up = self
                    .structure
                    .location_jacobian(&Self::shifted(theta, &[(s, hs)]), obs)
                    .expect("jacobian available");
                let dn = self
                    .structure
                    .location_jacobian(&Self::shifted(theta, &[(s, -hs)]), obs)
                    .expect("jacobian available");
                for r in 0..p {
                    out[s * p + r] = (&up[r] - &dn[r]) / (2.0 * hs);
                }
            } else {
                for r in 0..=s {
                    let hr = Self::step(theta, r, SECOND_STEP) * refine;
                    let d = if r == s {
                        let up = self.location(&Self::shifted(theta, &[(s, hs)]), i)?;
                        let mid = self.location(theta, i)?;
                        let dn = self.location(&Self::shifted(theta, &[(s, -hs)]), i)?;
                        (up - mid * 2.0 + dn) / (hs * hs)
                    } else {
                        let pp = self.location(&Self::shifted(theta, &[(s, hs), (r, hr)]), i)?;
                        let pm = self.location(&Self::shifted(theta, &[(s, hs), (r, -hr)]), i)?;
                        let mp = self.location(&Self::shifted(theta, &[(s, -hs), (r, hr)]), i)?;
                        let mm = self.location(&Self::shifted(theta, &[(s, -hs), (r, -hr)]), i)?;
                        (pp - pm - mp + mm) / (4.0 * hs * hr)
                    };
                    out[s * p + r] = d.clone();
                    out[r * p + s] = d;
                }
            }
        }
        symmetrize_hessian(&mut out, p);
        Ok(out)
    }

    fn fd_scale_hessian(&self, theta: &DVector<f64>, i: usize, refine: f64) -> Result<Vec<DMatrix<f64>>> {
        let p = self.n_params();
        let obs = &self.blocks[i];
        let q = obs.q();
        let analytic_first = self.structure.scale_jacobian(theta, obs).is_some();
        let mut out = vec![DMatrix::zeros(q, q); p * p];
        for s in 0..p {
            let hs = Self::step(theta, s, SECOND_STEP) * refine;
            if analytic_first {
                let up = self
                    .structure
                    .scale_jacobian(&Self::shifted(theta, &[(s, hs)]), obs)
                    .expect("jacobian available");
                let dn = self
                    .structure
                    .scale_jacobian(&Self::shifted(theta, &[(s, -hs)]), obs)
                    .expect("jacobian available");
                for r in 0..p {
                    out[s * p + r] = (&up[r] - &dn[r]) / (2.0 * hs);
                }
            } else {
                for r in 0..=s {
                    let hr = Self::step(theta, r, SECOND_STEP) * refine;
                    let d = if r == s {
                        let up = self.scale(&Self::shifted(theta, &[(s, hs)]), i)?;
                        let mid = self.scale(theta, i)?;
                        let dn = self.scale(&Self::shifted(theta, &[(s, -hs)]), i)?;
                        (up - mid * 2.0 + dn) / (hs * hs)
                    } else {
                        let pp = self.scale(&Self::shifted(theta, &[(s, hs), (r, hr)]), i)?;
                        let pm = self.scale(&Self::shifted(theta, &[(s, hs), (r, -hr)]), i)?;
                        let mp = self.scale(&Self::shifted(theta, &[(s, -hs), (r, hr)]), i)?;
                        let mm = self.scale(&Self::shifted(theta, &[(s, -hs), (r, -hr)]), i)?;
                        (pp - pm - mp + mm) / (4.0 * hs * hr)
                    };
                    out[s * p + r] = d.clone();
                    out[r * p + s] = d;
                }
            }
        }
        symmetrize_hessian(&mut out, p);
        Ok(out)
    }

    /// Compares analytic derivatives (where provided) against central differences.
    pub fn derivative_discrepancy(&self, theta: &DVector<f64>) -> Result<DerivativeCheck> {
        let p = self.n_params();
        let mut check = DerivativeCheck::default();
        for i in 0..self.n_obs() {
            let obs = &self.blocks[i];
            let mu = self.location(theta, i)?;
            let sig = self.scale(theta, i)?;
            let scale1 = 1.0 + mu.amax().max(sig.amax());
            if let Some(a) = self.structure.location_jacobian(theta, obs) {
                let fd = self.fd_location_jacobian(theta, i, 1.0)?;
                for r in 0..p {
                    let sc = 1e-3 * scale1 + a[r].amax();
                    for (x, y) in a[r].iter().zip(fd[r].iter()) {
                        check.first = check.first.max(rel_diff(*x, *y, sc));
                    }
                }
            }
            if let Some(c) = self.structure.scale_jacobian(theta, obs) {
                let fd = self.fd_scale_jacobian(theta, i, 1.0)?;
                for r in 0..p {
                    let sc = 1e-3 * scale1 + c[r].amax();
                    for (x, y) in c[r].iter().zip(fd[r].iter()) {
                        check.first = check.first.max(rel_diff(*x, *y, sc));
                    }
                }
            }
            // Second derivatives are compared against differences of function values.
            let fd_a2 = {
                let mut out = vec![DVector::zeros(obs.q()); p * p];
                for s in 0..p {
                    let hs = Self::step(theta, s, SECOND_STEP);
                    for r in 0..p {
                        let hr = Self::step(theta, r, SECOND_STEP);
                        out[s * p + r] = if r == s {
                            (self.location(&Self::shifted(theta, &[(s, hs)]), i)? - &mu * 2.0
                                + self.location(&Self::shifted(theta, &[(s, -hs)]), i)?)
                                / (hs * hs)
                        } else {
                            (self.location(&Self::shifted(theta, &[(s, hs), (r, hr)]), i)?
                                - self.location(&Self::shifted(theta, &[(s, hs), (r, -hr)]), i)?
                                - self.location(&Self::shifted(theta, &[(s, -hs), (r, hr)]), i)?
                                + self.location(&Self::shifted(theta, &[(s, -hs), (r, -hr)]), i)?)
                                / (4.0 * hs * hr)
                        };
                    }
                }
                out
            };
            if let Some(a2) = self.structure.location_hessian(theta, obs) {
                for k in 0..p * p {
                    let sc = 1e-2 * scale1 + a2[k].amax();
                    for (x, y) in a2[k].iter().zip(fd_a2[k].iter()) {
                        check.second = check.second.max(rel_diff(*x, *y, sc));
                    }
                }
            }
            if let Some(c2) = self.structure.scale_hessian(theta, obs) {
                for s in 0..p {
                    let hs = Self::step(theta, s, SECOND_STEP);
                    for r in 0..p {
                        let hr = Self::step(theta, r, SECOND_STEP);
                        let fd = if r == s {
                            (self.scale(&Self::shifted(theta, &[(s, hs)]), i)? - &sig * 2.0
                                + self.scale(&Self::shifted(theta, &[(s, -hs)]), i)?)
                                / (hs * hs)
                        } else {
                            (self.scale(&Self::shifted(theta, &[(s, hs), (r, hr)]), i)?
                                - self.scale(&Self::shifted(theta, &[(s, hs), (r, -hr)]), i)?
                                - self.scale(&Self::shifted(theta, &[(s, -hs), (r, hr)]), i)?
                                + self.scale(&Self::shifted(theta, &[(s, -hs), (r, -hr)]), i)?)
                                / (4.0 * hs * hr)
                        };
                        let an = &c2[s * p + r];
                        let sc = 1e-2 * scale1 + an.amax();
                        for (x, y) in an.iter().zip(fd.iter()) {
                            check.second = check.second.max(rel_diff(*x, *y, sc));
                        }
                    }
                }
            }
        }
        Ok(check)
    }

    /// Guards finite-difference fallbacks: derivatives from the default step
    /// must agree with a ten-times finer stencil to 1e-4 relative.
    pub fn check_fd_consistency(&self, theta: &DVector<f64>) -> Result<f64> {
        let s = &self.structure;
        let mut worst = 0.0f64;
        for i in 0..self.n_obs() {
            let obs = &self.blocks[i];
            // Derivatives that vanish identically only carry round-off; measure
            // discrepancies against the size of the functions themselves as a floor.
            let floor = 1e-3 * (1.0 + self.location(theta, i)?.amax().max(self.scale(theta, i)?.amax()));
            let mut cmp_v = |a: &[DVector<f64>], b: &[DVector<f64>]| {
                let sc = a.iter().chain(b).fold(floor, |m, x| m.max(x.amax()));
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).amax() / sc);
                }
            };
            if s.location_jacobian(theta, obs).is_none() {
                cmp_v(
                    &self.fd_location_jacobian(theta, i, 1.0)?,
                    &self.fd_location_jacobian(theta, i, 0.1)?,
                );
            }
            if s.location_hessian(theta, obs).is_none() {
                cmp_v(
                    &self.fd_location_hessian(theta, i, 1.0)?,
                    &self.fd_location_hessian(theta, i, 0.5)?,
                );
            }
            let mut cmp_m = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| {
                let sc = a.iter().chain(b).fold(floor, |m, x| m.max(x.amax()));
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).amax() / sc);
                }
            };
            if s.scale_jacobian(theta, obs).is_none() {
                cmp_m(
                    &self.fd_scale_jacobian(theta, i, 1.0)?,
                    &self.fd_scale_jacobian(theta, i, 0.1)?,
                );
            }
            if s.scale_hessian(theta, obs).is_none() {
                cmp_m(
                    &self.fd_scale_hessian(theta, i, 1.0)?,
                    &self.fd_scale_hessian(theta, i, 0.5)?,
                );
            }
        }
        if worst > 1e-4 {
            return Err(Error::Domain(format!(
                "finite-difference derivatives are unstable (relative change {worst:.2e} under step refinement)"
            )));
        }
        Ok(worst)
    }
}

fn symmetrize_hessian<T>(h: &mut [T], p: usize)
where
    T: Clone + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    for s in 0..p {
        for r in 0..s {
            let m = (h[s * p + r].clone() + h[r * p + s].clone()) * 0.5;
            h[s * p + r] = m.clone();
            h[r * p + s] = m;
        }
    }
}
