//! Elliptical density generators, their log-derivatives, radial moments and samplers.
//!
//! A family is described by its density generating function `g`, so that a
//! `q`-variate member has density `|Σ|^{-1/2} g((y-μ)' Σ^{-1} (y-μ))`. Everything
//! the estimators need from the family is `W_g = d log g / du` and the radial
//! moments `ψ(l,k) = E[W_g(R)^l R^k]`, `R = ||L||²` for a spherical `L`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::{self, QuadOptions};

/// User-supplied density generator.
///
/// `log_g` must be the log of a *normalised* generator for dimension `q`.
/// Anything not supplied analytically falls back to numerics: `W_g` to a
/// central difference of `log_g`, the ψ-moments to adaptive quadrature.
pub trait GeneratingFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> &str {
        "custom"
    }

    fn log_g(&self, u: f64, q: usize) -> f64;

    fn w_g(&self, _u: f64, _q: usize) -> Option<f64> {
        None
    }

    fn psi(&self, _q: usize, _l: u32, _k: u32) -> Option<f64> {
        None
    }

    /// Draws the squared radius `R = ||L||²` of the spherical law.
    fn sample_radius_sq(&self, _q: usize, _rng: &mut dyn RngCore) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug)]
pub enum FamilyKind {
    Normal,
    Cauchy,
    StudentT { nu: f64 },
    PowerExponential { lambda: f64 },
    Custom(Arc<dyn GeneratingFunction>),
}

/// An elliptical family with its shape parameter fixed at construction.
#[derive(Clone, Debug)]
pub struct DensityFamily {
    kind: FamilyKind,
}

/// Radial moments for one block dimension and the constants derived from them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiMoments {
    pub q: usize,
    pub psi21: f64,
    pub psi22: f64,
    pub psi32: f64,
    pub psi33: f64,
    pub c: f64,
    pub c_star: f64,
    pub omega_tilde: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl PsiMoments {
    pub fn from_psi(q: usize, psi21: f64, psi22: f64, psi32: f64, psi33: f64) -> Self {
        let qf = q as f64;
        let qq2 = qf * (qf + 2.0);
        let c = 4.0 * psi22 / qq2;
        let c_star = 8.0 * psi32 / qq2;
        let omega_tilde = psi33 / (qq2 * (qf + 4.0));
        let loc = 4.0 * psi21 / qf;
        Self {
            q,
            psi21,
            psi22,
            psi32,
            psi33,
            c,
            c_star,
            omega_tilde,
            eta1: c_star + loc,
            eta2: c_star - loc,
        }
    }

    /// Weight `4ψ21/q` multiplying `Σ` in the location block of `M`.
    pub fn location_weight(&self) -> f64 {
        4.0 * self.psi21 / self.q as f64
    }
}

fn surface_area(q: usize) -> f64 {
    let h = q as f64 / 2.0;
    2.0 * PI.powf(h) / ln_gamma(h).exp()
}

impl DensityFamily {
    pub fn normal() -> Self {
        Self {
            kind: FamilyKind::Normal,
        }
    }

    pub fn cauchy() -> Self {
        Self {
            kind: FamilyKind::Cauchy,
        }
    }

    pub fn student_t(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Domain(format!("Student t requires nu > 0, got {nu}")));
        }
        Ok(Self {
            kind: FamilyKind::StudentT { nu },
        })
    }

    pub fn power_exponential(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Domain(format!(
                "power exponential requires lambda > 0, got {lambda}"
            )));
        }
        Ok(Self {
            kind: FamilyKind::PowerExponential { lambda },
        })
    }

    pub fn custom(g: Arc<dyn GeneratingFunction>) -> Self {
        Self {
            kind: FamilyKind::Custom(g),
        }
    }

    /// Parses names such as `normal`, `cauchy`, `student-t`, `power-exponential`.
    pub fn from_name(name: &str, nu: Option<f64>, lambda: Option<f64>) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(Self::normal()),
            "cauchy" => Ok(Self::cauchy()),
            "student-t" | "student_t" | "t" | "studentt" => {
                Self::student_t(nu.ok_or_else(|| Error::Config("student-t needs --nu".into()))?)
            }
            "power-exponential" | "power_exponential" | "pe" => {
                Self::power_exponential(lambda.ok_or_else(|| Error::Config("power-exponential needs --lambda".into()))?)
            }
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn is_normal(&self) -> bool {
        matches!(self.kind, FamilyKind::Normal)
    }

    pub fn label(&self) -> String {
        match &self.kind {
            FamilyKind::Normal => "normal".into(),
            FamilyKind::Cauchy => "cauchy".into(),
            FamilyKind::StudentT { nu } => format!("student-t(nu={nu})"),
            FamilyKind::PowerExponential { lambda } => {
                format!("power-exponential(lambda={lambda})")
            }
            FamilyKind::Custom(g) => g.name().to_string(),
        }
    }

    /// `log g(u)` for a `q`-variate member, normalising constant included.
    pub fn log_g(&self, u: f64, q: usize) -> f64 {
        let qf = q as f64;
        match &self.kind {
            FamilyKind::Normal => -0.5 * qf * (2.0 * PI).ln() - 0.5 * u,
            FamilyKind::Cauchy => student_log_g(1.0, u, qf),
            FamilyKind::StudentT { nu } => student_log_g(*nu, u, qf),
            FamilyKind::PowerExponential { lambda } => {
                let l = *lambda;
                l.ln() + ln_gamma(qf / 2.0)
                    - ln_gamma(qf / (2.0 * l))
                    - qf / (2.0 * l) * 2f64.ln()
                    - 0.5 * qf * PI.ln()
                    - 0.5 * u.powf(l)
            }
            FamilyKind::Custom(g) => g.log_g(u, q),
        }
    }

    /// `W_g(u) = d log g(u) / du`.
    pub fn w_g(&self, u: f64, q: usize) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("W_g needs u >= 0, got {u}")));
        }
        if let FamilyKind::PowerExponential { lambda } = self.kind {
            if u == 0.0 && lambda < 1.0 {
                return Err(Error::Domain(format!(
                    "W_g is singular at u = 0 for power exponential with lambda = {lambda} < 1"
                )));
            }
        }
        Ok(self.w_g_raw(u, q))
    }

    fn w_g_raw(&self, u: f64, q: usize) -> f64 {
        let qf = q as f64;
        match &self.kind {
            FamilyKind::Normal => -0.5,
            FamilyKind::Cauchy => -(1.0 + qf) / (2.0 * (1.0 + u)),
            FamilyKind::StudentT { nu } => -(nu + qf) / (2.0 * (nu + u)),
            FamilyKind::PowerExponential { lambda } => {
                if *lambda == 1.0 {
                    -0.5
                } else {
                    -0.5 * lambda * u.powf(lambda - 1.0)
                }
            }
            FamilyKind::Custom(g) => g.w_g(u, q).unwrap_or_else(|| {
                let h = 1e-6f64.max(1e-6 * u);
                if u >= h {
                    (g.log_g(u + h, q) - g.log_g(u - h, q)) / (2.0 * h)
                } else {
                    (g.log_g(u + h, q) - g.log_g(u, q)) / h
                }
            }),
        }
    }

    /// Smallest `u` used when evaluating weights during fitting.
    pub(crate) fn clamp_u(&self, u: f64) -> f64 {
        match self.kind {
            FamilyKind::PowerExponential { lambda } if lambda < 1.0 => u.max(1e-12),
            _ => u,
        }
    }

    /// Weight `v = -2 W_g(u)` entering the score, with the fitter's clamp on `u`.
    pub fn weight(&self, u: f64, q: usize) -> Result<f64> {
        Ok(-2.0 * self.w_g(self.clamp_u(u), q)?)
    }

    /// The radial moment `ψ(l,k)`, closed form for built-ins, quadrature otherwise.
    pub fn psi_moment(&self, q: usize, l: u32, k: u32) -> Result<f64> {
        check_lk(l, k)?;
        if q == 0 {
            return Err(Error::Domain("block dimension must be >= 1".into()));
        }
        let qf = q as f64;
        match &self.kind {
            FamilyKind::Normal => Ok(match (l, k) {
                (2, 1) => qf / 4.0,
                (2, 2) => qf * (qf + 2.0) / 4.0,
                (3, 2) => -qf * (qf + 2.0) / 8.0,
                _ => -qf * (qf + 2.0) * (qf + 4.0) / 8.0,
            }),
            FamilyKind::Cauchy => Ok(student_psi(1.0, qf, l, k)),
            FamilyKind::StudentT { nu } => Ok(student_psi(*nu, qf, l, k)),
            FamilyKind::PowerExponential { lambda } => pe_psi(*lambda, q, l, k),
            FamilyKind::Custom(g) => match g.psi(q, l, k) {
                Some(v) => Ok(v),
                None => self.psi_by_quadrature(q, l, k),
            },
        }
    }

    /// Evaluates `ψ(l,k) = ∫ W(s²)^l g(s²) s^{q+2k-1} c_q ds` numerically.
    pub fn psi_by_quadrature(&self, q: usize, l: u32, k: u32) -> Result<f64> {
        check_lk(l, k)?;
        if let FamilyKind::PowerExponential { lambda } = self.kind {
            pe_side_condition(lambda, q)?;
        }
        let cq = surface_area(q);
        let qf = q as f64;
        let integrand = |s: f64| {
            if s <= 0.0 {
                return 0.0;
            }
            let u = s * s;
            let w = self.w_g_raw(u, q);
            let log_part = self.log_g(u, q) + (qf + 2.0 * k as f64 - 1.0) * s.ln();
            cq * w.powi(l as i32) * log_part.exp()
        };
        let r = quadrature::integrate_half_line(integrand, QuadOptions::default())?;
        Ok(r.value)
    }

    /// All ψ-moments and derived constants for block dimension `q`.
    pub fn derived_constants(&self, q: usize) -> Result<PsiMoments> {
        Ok(PsiMoments::from_psi(
            q,
            self.psi_moment(q, 2, 1)?,
            self.psi_moment(q, 2, 2)?,
            self.psi_moment(q, 3, 2)?,
            self.psi_moment(q, 3, 3)?,
        ))
    }

    /// Checks that `∫ u^{q/2-1} g(u) du` is finite; returns the total probability mass.
    pub fn check_integrable(&self, q: usize) -> Result<f64> {
        let cq = surface_area(q);
        let qf = q as f64;
        let r = quadrature::integrate_half_line(
            |s| {
                if s <= 0.0 {
                    return 0.0;
                }
                cq * (self.log_g(s * s, q) + (qf - 1.0) * s.ln()).exp()
            },
            QuadOptions::default(),
        )?;
        if !r.value.is_finite() {
            return Err(Error::Domain("generating function is not integrable".into()));
        }
        Ok(r.value)
    }

    /// Draws `R = ||L||²` for the spherical member of dimension `q`.
    pub fn sample_radius_sq<R: Rng>(&self, q: usize, rng: &mut R) -> Result<f64> {
        let qf = q as f64;
        match &self.kind {
            FamilyKind::Normal => {
                let d = ChiSquared::new(qf).map_err(|e| Error::Domain(e.to_string()))?;
                Ok(d.sample(rng))
            }
            FamilyKind::Cauchy | FamilyKind::StudentT { .. } => {
                let nu = match self.kind {
                    FamilyKind::StudentT { nu } => nu,
                    _ => 1.0,
                };
                let num = ChiSquared::new(qf).map_err(|e| Error::Domain(e.to_string()))?;
                let den = ChiSquared::new(nu).map_err(|e| Error::Domain(e.to_string()))?;
                let a = num.sample(rng);
                let b = den.sample(rng);
                Ok(nu * a / b)
            }
            FamilyKind::PowerExponential { lambda } => {
                let gam = Gamma::new(qf / (2.0 * lambda), 1.0).map_err(|e| Error::Domain(e.to_string()))?;
                let t: f64 = gam.sample(rng);
                Ok((2.0 * t).powf(1.0 / lambda))
            }
            FamilyKind::Custom(g) => g
                .sample_radius_sq(q, rng)
                .ok_or_else(|| Error::Config(format!("family '{}' provides no sampler", g.name()))),
        }
    }

    /// Draws `μ + L·sqrt(R)·d` with `L Lᵀ = Σ` and `d` uniform on the unit sphere.
    pub fn sample_with_factor<R: Rng>(
        &self,
        mu: &DVector<f64>,
        chol_l: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let q = mu.len();
        let g = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scaled = match self.kind {
            // Spherical normal draws directly; no radius/direction split needed.
            FamilyKind::Normal => g,
            _ => {
                let norm = g.norm();
                let r = self.sample_radius_sq(q, rng)?.sqrt();
                g * (r / norm)
            }
        };
        Ok(mu + chol_l * scaled)
    }

    /// Draws one `q`-vector from `El_q(μ, Σ, g)`.
    pub fn sample<R: Rng>(&self, mu: &DVector<f64>, sigma: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::Dimension("sigma must be q x q".into()));
        }
        let chol = linalg::cholesky(sigma, "scale matrix")?;
        self.sample_with_factor(mu, &chol.l(), rng)
    }
}

fn check_lk(l: u32, k: u32) -> Result<()> {
    match (l, k) {
        (2, 1) | (2, 2) | (3, 2) | (3, 3) => Ok(()),
        _ => Err(Error::Domain(format!(
            "psi({l},{k}) is not used; valid pairs are (2,1), (2,2), (3,2), (3,3)"
        ))),
    }
}

fn student_log_g(nu: f64, u: f64, q: f64) -> f64 {
    ln_gamma((nu + q) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * q * (PI * nu).ln() - 0.5 * (nu + q) * (u / nu).ln_1p()
}

fn student_psi(nu: f64, q: f64, l: u32, k: u32) -> f64 {
    match (l, k) {
        (2, 1) => q * (q + nu) / (4.0 * (q + nu + 2.0)),
        (2, 2) => q * (q + 2.0) * (q + nu) / (4.0 * (q + nu + 2.0)),
        (3, 2) => -q * (q + 2.0) * (q + nu).powi(2) / (8.0 * (q + 2.0 + nu) * (q + 4.0 + nu)),
        _ => -q * (q + 2.0) * (q + 4.0) * (q + nu).powi(2) / (8.0 * (q + 2.0 + nu) * (q + 4.0 + nu)),
    }
}

fn pe_side_condition(lambda: f64, q: usize) -> Result<()> {
    if q == 1 && lambda <= 0.25 {
        return Err(Error::Domain(format!(
            "power exponential with q = 1 requires lambda > 1/4, got {lambda}"
        )));
    }
    Ok(())
}

fn pe_psi(lambda: f64, q: usize, l: u32, k: u32) -> Result<f64> {
    pe_side_condition(lambda, q)?;
    let qf = q as f64;
    let base = qf / (2.0 * lambda);
    let scale = 2f64.powf(-1.0 / lambda);
    Ok(match (l, k) {
        (2, 1) => lambda * lambda * scale * (ln_gamma((qf - 2.0) / (2.0 * lambda) + 2.0) - ln_gamma(base)).exp(),
        (2, 2) => qf * (2.0 * lambda + qf) / 4.0,
        (3, 2) => -lambda.powi(3) * scale * (ln_gamma((qf - 2.0) / (2.0 * lambda) + 3.0) - ln_gamma(base)).exp(),
        _ => -qf * (2.0 * lambda + qf) * (4.0 * lambda + qf) / 8.0,
    })
}
