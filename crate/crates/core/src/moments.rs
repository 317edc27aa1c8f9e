//! Mixed moments of `v = −2W_g(u)` and `z ~ El_q(0, Σ)` that drive the
//! information and bias formulas, together with a Monte Carlo checker.
//!
//! The fourth-order identities are stated with the symmetrised Kronecker
//! term `(I + K_qq)(Σ ⊗ Σ)`; for `q > 1` the plain `2Σ ⊗ Σ` is not the
//! expectation of the symmetric matrix `vec(zzᵀ)vec(zzᵀ)ᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::family::DensityFamily;
use crate::linalg::{cholesky, commutation, kron, vec};

#[derive(Clone, Debug)]
pub struct MomentCheck {
    pub name: &'static str,
    pub expected: DMatrix<f64>,
    pub mean: DMatrix<f64>,
    /// Monte Carlo standard error of each entry of `mean`.
    pub std_err: DMatrix<f64>,
}

impl MomentCheck {
    /// Largest `|mean − expected| / se` over entries; entries whose sample
    /// variance is zero must match to rounding.
    pub fn max_z(&self) -> f64 {
        let scale = self.expected.amax().max(self.mean.amax()).max(1.0);
        self.mean
            .iter()
            .zip(self.expected.iter())
            .zip(self.std_err.iter())
            .map(|((m, e), s)| {
                let d = (m - e).abs();
                if *s > 1e-14 * scale {
                    d / s
                } else if d <= 1e-10 * scale {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `vec Σ vec Σᵀ + (I + K)(Σ ⊗ Σ)`
fn fourth_order(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let q = sigma.nrows();
    let vs = vec(sigma);
    let kk = kron(sigma, sigma);
    &vs * vs.transpose() + &kk + commutation(q, q) * &kk
}

/// Three symmetric test matrices for the cubic trace identity.
pub fn default_trace_matrices(q: usize) -> [DMatrix<f64>; 3] {
    [
        DMatrix::identity(q, q),
        DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 + i as f64 } else { 0.0 }),
        DMatrix::from_fn(q, q, |i, j| 0.5 + 0.25 * (i + j) as f64),
    ]
}

/// Theoretical values, in the order returned by [`check_moments`].
pub fn expected_moments(
    family: &DensityFamily,
    sigma: &DMatrix<f64>,
    a: &[DMatrix<f64>; 3],
) -> Result<Vec<(&'static str, DMatrix<f64>)>> {
    let q = sigma.nrows();
    let k = family.derived_constants(q)?;
    let four = fourth_order(sigma);
    let t = |m: &DMatrix<f64>| (m * sigma).trace();
    let tt = |m: &DMatrix<f64>, n: &DMatrix<f64>| (m * sigma * n * sigma).trace();
    let cubic = t(&a[0]) * t(&a[1]) * t(&a[2])
        + 2.0 * t(&a[0]) * tt(&a[1], &a[2])
        + 2.0 * t(&a[1]) * tt(&a[0], &a[2])
        + 2.0 * t(&a[2]) * tt(&a[0], &a[1])
        + 8.0 * (&a[0] * sigma * &a[1] * sigma * &a[2] * sigma).trace();
    Ok(vec![
        ("E[v z]", DMatrix::zeros(q, 1)),
        ("E[v^2 z z']", sigma * (4.0 * k.psi21 / q as f64)),
        ("E[v^2 vec(zz') z']", DMatrix::zeros(q * q, q)),
        ("E[v^2 vec(zz') vec(zz')']", &four * k.c),
        ("E[v^3 vec(zz') vec(zz')']", &four * (-k.c_star)),
        (
            "E[v^3 z'Az z'Bz z'Cz]",
            DMatrix::from_element(1, 1, -8.0 * k.omega_tilde * cubic),
        ),
    ])
}

/// Running mean and variance of a matrix-valued sample.
struct Welford {
    n: f64,
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(r: usize, c: usize) -> Self {
        Self {
            n: 0.0,
            mean: DMatrix::zeros(r, c),
            m2: DMatrix::zeros(r, c),
        }
    }

    fn push(&mut self, x: &DMatrix<f64>) {
        self.n += 1.0;
        let d = x - &self.mean;
        self.mean += &d / self.n;
        let d2 = x - &self.mean;
        self.m2 += d.component_mul(&d2);
    }

    fn std_err(&self) -> DMatrix<f64> {
        self.m2.map(|v| (v / (self.n - 1.0) / self.n).sqrt())
    }
}

/// Monte Carlo estimates of the moment identities from `draws` samples of
/// `z ~ El_q(0, Σ)`.
pub fn check_moments<R: Rng>(
    family: &DensityFamily,
    sigma: &DMatrix<f64>,
    a: &[DMatrix<f64>; 3],
    draws: usize,
    rng: &mut R,
) -> Result<Vec<MomentCheck>> {
    if draws < 2 {
        return Err(Error::Config("need at least two draws".into()));
    }
    let q = sigma.nrows();
    let expected = expected_moments(family, sigma, a)?;
    let chol = cholesky(sigma, "scale matrix")?;
    let l = chol.l();
    let zero = DVector::zeros(q);
    let mut acc: Vec<Welford> = expected
        .iter()
        .map(|(_, e)| Welford::new(e.nrows(), e.ncols()))
        .collect();
    for _ in 0..draws {
        let z = family.sample_with_factor(&zero, &l, rng)?;
        let si_z = chol.solve(&z);
        let u = z.dot(&si_z);
        let v = family.weight(u, q)?;
        let zz = vec(&(&z * z.transpose()));
        let outer = &zz * zz.transpose();
        let quad = |m: &DMatrix<f64>| z.dot(&(m * &z));
        let values = [
            DMatrix::from_column_slice(q, 1, (&z * v).as_slice()),
            &z * z.transpose() * (v * v),
            &zz * z.transpose() * (v * v),
            &outer * (v * v),
            &outer * (v * v * v),
            DMatrix::from_element(1, 1, v * v * v * quad(&a[0]) * quad(&a[1]) * quad(&a[2])),
        ];
        for (w, x) in acc.iter_mut().zip(values.iter()) {
            w.push(x);
        }
    }
    Ok(expected
        .into_iter()
        .zip(acc)
        .map(|((name, expected), w)| MomentCheck {
            name,
            expected,
            std_err: w.std_err(),
            mean: w.mean,
        })
        .collect())
}
