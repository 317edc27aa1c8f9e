//! Reference computations that share nothing with the library beyond the
//! user-level location/scale functions of a model.
//!
//! `cox_snell_bias` evaluates the classical second-order bias
//! `b = K⁻¹ w`, `w_r = Σ_{tu} κ^{tu} (½κ_{rtu} + κ_{rt,u})`, rewritten through
//! the Bartlett identities as
//! `¼ Σ_{tu} κ^{tu} (κ_{rt}^{(u)} + κ_{ru}^{(t)} − κ_{tu}^{(r)} − κ_{r,t,u})`
//! so that only first derivatives of the log-density are needed. Expectations
//! are computed by product quadrature: a composite Gauss–Legendre rule in the
//! radius and equally spaced directions (exact signs for q = 1).

use nalgebra::{DMatrix, DVector};

use elliptic_bias::ModelSpec;

#[derive(Clone, Copy, Debug)]
pub enum Radial {
    Normal,
    StudentT(f64),
    PowerExp(f64),
}

impl Radial {
    /// Unnormalised `log g(u)`.
    pub fn log_g(&self, u: f64, q: usize) -> f64 {
        let qf = q as f64;
        match *self {
            Radial::Normal => -0.5 * u,
            Radial::StudentT(nu) => -0.5 * (nu + qf) * (u / nu).ln_1p(),
            Radial::PowerExp(l) => -0.5 * u.powf(l),
        }
    }

    /// `d log g / du`
    pub fn w(&self, u: f64, q: usize) -> f64 {
        let qf = q as f64;
        match *self {
            Radial::Normal => -0.5,
            Radial::StudentT(nu) => -0.5 * (nu + qf) / (nu + u),
            Radial::PowerExp(l) => -0.5 * l * u.powf(l - 1.0),
        }
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Quadrature over the standardised elliptical vector `z = r e`.
pub struct Rule {
    pub q: usize,
    /// (radius, weight) with weights summing to one over radius × direction.
    pub radial: Vec<(f64, f64)>,
    pub directions: Vec<(DVector<f64>, f64)>,
}

impl Rule {
    /// `r = (w / (1 − w))³` maps (0, 1) onto the half line and flattens the
    /// algebraic behaviour of the integrands at both ends.
    pub fn new(law: Radial, q: usize, panels: usize, order: usize, angles: usize) -> Self {
        assert!(q == 1 || q == 2, "oracle supports q = 1 or 2");
        let gl = gauss_legendre(order);
        let mut radial = Vec::with_capacity(panels * order);
        let h = 1.0 / panels as f64;
        for k in 0..panels {
            let a = k as f64 * h;
            for &(x, wx) in &gl {
                let w = a + 0.5 * h * (x + 1.0);
                let t = w / (1.0 - w);
                let r = t * t * t;
                let dr = 3.0 * t * t / ((1.0 - w) * (1.0 - w));
                let dens = (law.log_g(r * r, q)).exp() * r.powi(q as i32 - 1);
                let weight = 0.5 * h * wx * dr * dens;
                if weight.is_finite() && weight > 0.0 {
                    radial.push((r, weight));
                }
            }
        }
        let total: f64 = radial.iter().map(|x| x.1).sum();
        for x in &mut radial {
            x.1 /= total;
        }
        let directions = if q == 1 {
            vec![
                (DVector::from_element(1, 1.0), 0.5),
                (DVector::from_element(1, -1.0), 0.5),
            ]
        } else {
            (0..angles)
                .map(|j| {
                    let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / angles as f64;
                    (DVector::from_column_slice(&[phi.cos(), phi.sin()]), 1.0 / angles as f64)
                })
                .collect()
        };
        Self { q, radial, directions }
    }
}

fn richardson<T, F>(f: F, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + Clone,
{
    let d1 = (f(h) - f(-h)) * (1.0 / (2.0 * h));
    let d2 = (f(0.5 * h) - f(-0.5 * h)) * (1.0 / h);
    (d2 * 4.0 - d1) * (1.0 / 3.0)
}

fn shifted(theta: &DVector<f64>, r: usize, h: f64) -> DVector<f64> {
    let mut t = theta.clone();
    t[r] += h;
    t
}

/// Finite-difference `∂μ_i/∂θ_r` and `∂Σ_i/∂θ_r` straight from the model's functions.
pub fn derivatives(model: &ModelSpec, theta: &DVector<f64>, i: usize) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let p = theta.len();
    let mut a = Vec::with_capacity(p);
    let mut c = Vec::with_capacity(p);
    for r in 0..p {
        let h = 1e-3 * (1.0 + theta[r].abs());
        a.push(richardson(|e| model.location(&shifted(theta, r, e), i).unwrap(), h));
        c.push(richardson(|e| model.scale(&shifted(theta, r, e), i).unwrap(), h));
    }
    (a, c)
}

/// Per-observation scores at θ for every quadrature point, with weights.
fn score_cloud(
    model: &ModelSpec,
    law: Radial,
    rule: &Rule,
    theta: &DVector<f64>,
    i: usize,
) -> Vec<(DVector<f64>, f64)> {
    let q = rule.q;
    let p = theta.len();
    let sigma = model.scale(theta, i).unwrap();
    let l = sigma.clone().cholesky().expect("Sigma PD").l();
    let si = sigma.clone().try_inverse().unwrap();
    let (a, c) = derivatives(model, theta, i);
    let tr: Vec<f64> = c.iter().map(|ci| (&si * ci).trace()).collect();
    let sa: Vec<DVector<f64>> = a.iter().map(|ar| &si * ar).collect();
    let scs: Vec<DMatrix<f64>> = c.iter().map(|cr| &si * cr * &si).collect();
    let mut out = Vec::with_capacity(rule.radial.len() * rule.directions.len());
    for &(r, wr) in &rule.radial {
        for (e, we) in &rule.directions {
            let z = &l * (e * r);
            let u = r * r;
            let w = law.w(u, q);
            let mut s = DVector::zeros(p);
            for k in 0..p {
                let du = -2.0 * sa[k].dot(&z) - (z.transpose() * &scs[k] * &z)[(0, 0)];
                s[k] = -0.5 * tr[k] + w * du;
            }
            out.push((s, wr * we));
        }
    }
    out
}

/// `K(θ) = Σ_i E[U_i U_iᵀ]` by quadrature.
pub fn fisher(model: &ModelSpec, law: Radial, rule: &Rule, theta: &DVector<f64>) -> DMatrix<f64> {
    let p = theta.len();
    let mut k = DMatrix::zeros(p, p);
    for i in 0..model.n_obs() {
        for (s, w) in score_cloud(model, law, rule, theta, i) {
            k += &s * s.transpose() * w;
        }
    }
    k
}

/// Second-order bias of the MLE at θ.
pub fn cox_snell_bias(model: &ModelSpec, law: Radial, rule: &Rule, theta: &DVector<f64>) -> DVector<f64> {
    let p = theta.len();
    let k = fisher(model, law, rule, theta);
    let k_inv = k.clone().try_inverse().unwrap();
    // dk[u] = ∂K/∂θ_u
    let dk: Vec<DMatrix<f64>> = (0..p)
        .map(|u| {
            let h = 1e-3 * (1.0 + theta[u].abs());
            richardson(|e| fisher(model, law, rule, &shifted(theta, u, e)), h)
        })
        .collect();
    let mut k3 = vec![0.0; p * p * p];
    for i in 0..model.n_obs() {
        for (s, w) in score_cloud(model, law, rule, theta, i) {
            for r in 0..p {
                for t in 0..p {
                    for u in 0..p {
                        k3[(r * p + t) * p + u] += w * s[r] * s[t] * s[u];
                    }
                }
            }
        }
    }
    // κ_{ab}^{(c)} = −∂K_ab/∂θ_c
    let kd = |a: usize, b: usize, c: usize| -dk[c][(a, b)];
    let mut wv = DVector::zeros(p);
    for r in 0..p {
        let mut acc = 0.0;
        for t in 0..p {
            for u in 0..p {
                acc += k_inv[(t, u)] * (kd(r, t, u) + kd(r, u, t) - kd(t, u, r) - k3[(r * p + t) * p + u]);
            }
        }
        wv[r] = 0.25 * acc;
    }
    k_inv * wv
}
