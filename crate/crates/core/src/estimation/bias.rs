//! Second-order bias of the MLE in weighted least squares form:
//! `bias = (FᵀH̃F)⁻¹ FᵀH̃ ξ`, `ξ = Σ_r Φ_(r) K⁻¹[:, r]`.

use nalgebra::{DMatrix, DVector};

use super::factor_information;
use crate::blocks::{assemble_blocks, h_inverse, BlockMatrices, ObservationMatrices};
use crate::error::{Error, Result};
use crate::family::PsiMoments;
use crate::linalg::{self, kron, vec};
use crate::model::{Derivatives, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasPath {
    /// `Φ = -½(H⁻¹M⁻¹B H F + ∂F)`, any family.
    General,
    /// Normal family only: `Φ = -½(J + ∂F)`.
    NormalReduced,
    /// Blockwise computation for models whose location and scale parameters separate.
    Orthogonal,
}

/// Per-observation intermediates, one entry per parameter index r.
#[derive(Clone, Debug, Default)]
pub struct ObservationBias {
    pub phi: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub s1: Vec<DMatrix<f64>>,
    pub s2: Vec<DMatrix<f64>>,
    pub df: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct BiasComponents {
    pub path: BiasPath,
    /// Filled by [`bias_vector`] and [`bias_vector_normal_reduced`]; empty for the orthogonal path.
    pub per_obs: Vec<ObservationBias>,
    /// Stacked over observations, `q_i + q_i²` entries each.
    pub xi: DVector<f64>,
    pub bias: DVector<f64>,
    /// `K(θ)`
    pub fisher: DMatrix<f64>,
}

fn check_symmetric_second(der: &Derivatives, p: usize) -> Result<()> {
    let scale = der
        .a2
        .iter()
        .map(|a| a.amax())
        .chain(der.c2.iter().map(|c| c.amax()))
        .fold(1.0f64, f64::max);
    for s in 0..p {
        for r in 0..s {
            let da = (&der.a2[s * p + r] - &der.a2[r * p + s]).amax();
            let dc = (&der.c2[s * p + r] - &der.c2[r * p + s]).amax();
            if da.max(dc) > 1e-6 * scale {
                return Err(Error::Domain(format!(
                    "second derivatives are not symmetric in ({r}, {s})"
                )));
            }
        }
    }
    Ok(())
}

/// `∂F_i/∂θ_r`: column s is `[a_{i(rs)}; vec(C_{i(rs)})]`.
fn df_matrix(der: &Derivatives, q: usize, p: usize, r: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(q + q * q, p);
    for s in 0..p {
        out.view_mut((0, s), (q, 1)).copy_from(&der.a2[r * p + s]);
        out.view_mut((q, s), (q * q, 1)).copy_from(&vec(&der.c2[r * p + s]));
    }
    out
}

/// `S_1(r) = vecΣ vec(C_r)ᵀ + ½ vecΣ vecΣᵀ tr(C_rΣ⁻¹)`.
fn s1_matrix(vs: &DVector<f64>, vc: &DVector<f64>, tr: f64) -> DMatrix<f64> {
    vs * vc.transpose() + vs * vs.transpose() * (0.5 * tr)
}

/// `S_2(r) = vec(C_r)vecΣᵀ + vecΣ vec(C_r)ᵀ + 4Σ⊗C_r + (Σ⊗Σ + ½vecΣvecΣᵀ) tr(C_rΣ⁻¹)`.
fn s2_matrix(sigma: &DMatrix<f64>, c: &DMatrix<f64>, vs: &DVector<f64>, vc: &DVector<f64>, tr: f64) -> DMatrix<f64> {
    vc * vs.transpose()
        + vs * vc.transpose()
        + kron(sigma, c) * 4.0
        + (kron(sigma, sigma) + vs * vs.transpose() * 0.5) * tr
}

fn b_matrix(
    sigma: &DMatrix<f64>,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    tr: f64,
    k: &PsiMoments,
) -> DMatrix<f64> {
    let q = sigma.nrows();
    let vs = vec(sigma);
    let (e1, e2) = (k.eta1, k.eta2);
    let am = DMatrix::from_column_slice(q, 1, a.as_slice());
    let mut b = DMatrix::zeros(q + q * q, q + q * q);
    b.view_mut((0, 0), (q, q))
        .copy_from(&(c * (-0.5 * e1) - sigma * (0.25 * e1 * tr)));
    b.view_mut((0, q), (q, q * q))
        .copy_from(&(kron(sigma, &am.transpose()) * (-e1) - a * vs.transpose() * (0.5 * e1)));
    b.view_mut((q, 0), (q * q, q))
        .copy_from(&(kron(sigma, &am) * (-e2) - &vs * a.transpose() * (0.5 * e1)));
    b.view_mut((q, q), (q * q, q * q))
        .copy_from(&(s1 * (-(k.c - 1.0)) - s2 * (0.5 * (k.c + 8.0 * k.omega_tilde))));
    b
}

fn finish(
    path: BiasPath,
    blocks: &BlockMatrices,
    per_obs: Vec<ObservationBias>,
    xi: DVector<f64>,
    fisher: DMatrix<f64>,
) -> Result<BiasComponents> {
    let chol = factor_information(&fisher)?;
    let bias = chol.solve(&blocks.weighted_cross(&xi));
    Ok(BiasComponents {
        path,
        per_obs,
        xi,
        bias,
        fisher,
    })
}

/// Shared driver for the general and normal-reduced paths.
fn phi_path(
    model: &ModelSpec,
    theta: &DVector<f64>,
    blocks: &BlockMatrices,
    path: BiasPath,
    keep: bool,
) -> Result<BiasComponents> {
    let p = model.n_params();
    let fisher = blocks.fisher();
    let k_inv = {
        let mut inv = factor_information(&fisher)?.inverse();
        linalg::symmetrize(&mut inv);
        inv
    };
    let mut xi = DVector::zeros(blocks.stacked_len());
    let mut per_obs = Vec::new();
    let mut off = 0;
    for (i, om) in blocks.obs.iter().enumerate() {
        let der = model.derivatives(theta, i, true)?;
        check_symmetric_second(&der, p)?;
        let (xi_i, ob) = match path {
            BiasPath::General => general_obs(om, &der, &k_inv, keep)?,
            BiasPath::NormalReduced => normal_obs(om, &der, &k_inv, keep),
            BiasPath::Orthogonal => unreachable!("orthogonal path has its own driver"),
        };
        xi.rows_mut(off, xi_i.len()).copy_from(&xi_i);
        off += xi_i.len();
        if keep {
            per_obs.push(ob);
        }
    }
    finish(path, blocks, per_obs, xi, fisher)
}

fn general_obs(
    om: &ObservationMatrices,
    der: &Derivatives,
    k_inv: &DMatrix<f64>,
    keep: bool,
) -> Result<(DVector<f64>, ObservationBias)> {
    let (q, p) = (om.q, om.f.ncols());
    let m_inv = linalg::spd_inverse(&om.m, "M_i")?;
    let hinv_minv = h_inverse(&om.sigma) * m_inv;
    let hf = &om.h * &om.f;
    let vs = vec(&om.sigma);
    let mut xi = DVector::zeros(q + q * q);
    let mut ob = ObservationBias::default();
    for r in 0..p {
        let c = &der.c[r];
        let vc = vec(c);
        let tr = (c * &om.sigma_inv).trace();
        let s1 = s1_matrix(&vs, &vc, tr);
        let s2 = s2_matrix(&om.sigma, c, &vs, &vc, tr);
        let b = b_matrix(&om.sigma, &der.a[r], c, &s1, &s2, tr, &om.constants);
        let df = df_matrix(der, q, p, r);
        let phi = (&hinv_minv * &b * &hf + &df) * -0.5;
        xi += &phi * k_inv.column(r);
        if keep {
            ob.phi.push(phi);
            ob.b.push(b);
            ob.s1.push(s1);
            ob.s2.push(s2);
            ob.df.push(df);
        }
    }
    Ok((xi, ob))
}

fn normal_obs(
    om: &ObservationMatrices,
    der: &Derivatives,
    k_inv: &DMatrix<f64>,
    keep: bool,
) -> (DVector<f64>, ObservationBias) {
    let (q, p) = (om.q, om.f.ncols());
    let eye = DMatrix::identity(q, q);
    let mut xi = DVector::zeros(q + q * q);
    let mut ob = ObservationBias::default();
    for r in 0..p {
        let mut j = DMatrix::zeros(q + q * q, p);
        j.view_mut((q, 0), (q * q, p))
            .copy_from(&(kron(&eye, &DMatrix::from_column_slice(q, 1, der.a[r].as_slice())) * &om.d * 2.0));
        let df = df_matrix(der, q, p, r);
        let phi = (&j + &df) * -0.5;
        xi += &phi * k_inv.column(r);
        if keep {
            ob.phi.push(phi);
            ob.b.push(j);
            ob.df.push(df);
        }
    }
    (xi, ob)
}

/// Bias vector through the general `Φ_(r)` construction; works for every family.
pub fn bias_vector(model: &ModelSpec, theta: &DVector<f64>) -> Result<BiasComponents> {
    let blocks = assemble_blocks(model, theta)?;
    phi_path(model, theta, &blocks, BiasPath::General, true)
}

/// Normal-family reduction where `H⁻¹M⁻¹B_(r)HF` collapses to `J_(r) = [0; 2(I⊗a_r)D]`.
/// For the normal family `B` in [`ObservationBias::b`] holds `J_(r)`.
pub fn bias_vector_normal_reduced(model: &ModelSpec, theta: &DVector<f64>) -> Result<BiasComponents> {
    if !model.family().is_normal() {
        return Err(Error::Config(
            "the reduced bias path applies to the normal family only".into(),
        ));
    }
    let blocks = assemble_blocks(model, theta)?;
    phi_path(model, theta, &blocks, BiasPath::NormalReduced, true)
}

/// Blockwise bias for models with separate location (`θ₁`) and scale (`θ₂`) parameters.
pub fn bias_vector_orthogonal(model: &ModelSpec, theta: &DVector<f64>) -> Result<BiasComponents> {
    let blocks = assemble_blocks(model, theta)?;
    orthogonal(model, theta, &blocks)
}

/// Internal entry used by the fitters, which already hold the block matrices.
pub(crate) fn bias_from_blocks(
    model: &ModelSpec,
    theta: &DVector<f64>,
    blocks: &BlockMatrices,
    path: BiasPath,
) -> Result<DVector<f64>> {
    let bc = match path {
        BiasPath::Orthogonal => orthogonal(model, theta, blocks)?,
        other => phi_path(model, theta, blocks, other, false)?,
    };
    Ok(bc.bias)
}

struct OrthObs {
    der: Derivatives,
    d1: DMatrix<f64>,
    v2: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
}

fn orthogonal(model: &ModelSpec, theta: &DVector<f64>, blocks: &BlockMatrices) -> Result<BiasComponents> {
    let (p1, p2) = model
        .orthogonal_split()
        .ok_or_else(|| Error::Split("model declares no location/scale split".into()))?;
    let p = p1 + p2;

    let mut parts = Vec::with_capacity(blocks.obs.len());
    let mut k1 = DMatrix::zeros(p1, p1);
    let mut k2 = DMatrix::zeros(p2, p2);
    for (i, om) in blocks.obs.iter().enumerate() {
        let q = om.q;
        let der = model.derivatives(theta, i, true)?;
        check_symmetric_second(&der, p)?;
        let scale = 1.0 + om.d.amax().max(om.vmat.amax());
        let tol = 1e-9 * scale;
        for r in p1..p {
            if der.a[r].amax() > tol {
                return Err(Error::Split(format!(
                    "location of observation {i} depends on scale parameter {r}"
                )));
            }
        }
        for r in 0..p1 {
            if der.c[r].amax() > tol {
                return Err(Error::Split(format!(
                    "scale of observation {i} depends on location parameter {r}"
                )));
            }
        }
        let d1 = om.d.columns(0, p1).into_owned();
        let v2 = om.vmat.columns(p1, p2).into_owned();
        let k = &om.constants;
        let h1 = &om.sigma_inv * k.location_weight();
        let vsi = vec(&om.sigma_inv);
        let h2 = kron(&om.sigma_inv, &om.sigma_inv) * (0.5 * k.c) + &vsi * vsi.transpose() * (0.25 * (k.c - 1.0));
        k1 += d1.transpose() * &h1 * &d1;
        k2 += v2.transpose() * &h2 * &v2;
        debug_assert_eq!(q * q, v2.nrows());
        parts.push(OrthObs { der, d1, v2, h1, h2 });
    }
    linalg::symmetrize(&mut k1);
    linalg::symmetrize(&mut k2);
    let ch1 = factor_information(&k1)?;
    let ch2 = factor_information(&k2)?;
    let mut k1_inv = ch1.inverse();
    let mut k2_inv = ch2.inverse();
    linalg::symmetrize(&mut k1_inv);
    linalg::symmetrize(&mut k2_inv);

    let mut xi = DVector::zeros(blocks.stacked_len());
    let mut rhs1 = DVector::zeros(p1);
    let mut rhs2 = DVector::zeros(p2);
    let mut off = 0;
    for (om, part) in blocks.obs.iter().zip(&parts) {
        let q = om.q;
        let k = &om.constants;
        let der = &part.der;
        let sigma = &om.sigma;
        let vs = vec(sigma);
        let vsi = vec(&om.sigma_inv);

        let mut xi1 = DVector::zeros(q);
        for r in 0..p1 {
            for s in 0..p1 {
                xi1 += &der.a2[s * p + r] * (-0.5 * k1_inv[(s, r)]);
            }
        }

        // M* = (2Σ⊗Σ) M₂⁻¹
        let denom = 2.0 * k.c + (k.c - 1.0) * q as f64;
        let m_star = (DMatrix::identity(q * q, q * q) - &vs * vsi.transpose() * ((k.c - 1.0) / denom)) / k.c;

        let eye = DMatrix::identity(q, q);
        let mut acc = DVector::zeros(q * q);
        for r in 0..p1 {
            let a = &der.a[r];
            let ia = kron(&eye, &DMatrix::from_column_slice(q, 1, a.as_slice()));
            let p_star = (ia * (2.0 * k.eta2) + &vs * (a.transpose() * &om.sigma_inv) * k.eta1) * &part.d1;
            acc += p_star * k1_inv.column(r) * 0.25;
        }
        let mut xi2 = &m_star * acc;
        let kinv_kron = kron(&om.sigma_inv, &om.sigma_inv);
        for s in 0..p2 {
            let c = &der.c[p1 + s];
            let vc = vec(c);
            let tr = (c * &om.sigma_inv).trace();
            let s1 = s1_matrix(&vs, &vc, tr);
            let s2 = s2_matrix(sigma, c, &vs, &vc, tr);
            let q_star = (s1 * (k.c - 1.0) + s2 * (0.5 * (k.c + 8.0 * k.omega_tilde))) * &kinv_kron * &part.v2;
            let mut dv = DMatrix::zeros(q * q, p2);
            for t in 0..p2 {
                dv.set_column(t, &vec(&der.c2[(p1 + s) * p + p1 + t]));
            }
            let term = &m_star * q_star * 0.25 - dv * 0.5;
            xi2 += term * k2_inv.column(s);
        }

        rhs1 += part.d1.transpose() * (&part.h1 * &xi1);
        rhs2 += part.v2.transpose() * (&part.h2 * &xi2);
        xi.rows_mut(off, q).copy_from(&xi1);
        xi.rows_mut(off + q, q * q).copy_from(&xi2);
        off += q + q * q;
    }

    let mut bias = DVector::zeros(p);
    bias.rows_mut(0, p1).copy_from(&ch1.solve(&rhs1));
    bias.rows_mut(p1, p2).copy_from(&ch2.solve(&rhs2));
    let mut fisher = DMatrix::zeros(p, p);
    fisher.view_mut((0, 0), (p1, p1)).copy_from(&k1);
    fisher.view_mut((p1, p1), (p2, p2)).copy_from(&k2);
    Ok(BiasComponents {
        path: BiasPath::Orthogonal,
        per_obs: Vec::new(),
        xi,
        bias,
        fisher,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::family::DensityFamily;
    use crate::model::{ObservationBlock, Structure};

    /// μ = θ0, Σ = θ1 with analytic derivatives.
    #[derive(Debug)]
    struct Iid;

    impl Structure for Iid {
        fn n_params(&self) -> usize {
            2
        }
        fn location(&self, t: &DVector<f64>, _: &ObservationBlock) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, t[0]))
        }
        fn scale(&self, t: &DVector<f64>, _: &ObservationBlock) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, t[1]))
        }
        fn location_jacobian(&self, _: &DVector<f64>, _: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
            Some(vec![DVector::from_element(1, 1.0), DVector::zeros(1)])
        }
        fn scale_jacobian(&self, _: &DVector<f64>, _: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
            Some(vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)])
        }
        fn location_hessian(&self, _: &DVector<f64>, _: &ObservationBlock) -> Option<Vec<DVector<f64>>> {
            Some(vec![DVector::zeros(1); 4])
        }
        fn scale_hessian(&self, _: &DVector<f64>, _: &ObservationBlock) -> Option<Vec<DMatrix<f64>>> {
            Some(vec![DMatrix::zeros(1, 1); 4])
        }
        fn orthogonal_split(&self) -> Option<(usize, usize)> {
            Some((1, 1))
        }
    }

    fn iid(n: usize, family: DensityFamily) -> ModelSpec {
        let blocks = (0..n)
            .map(|i| ObservationBlock::scalar((i as f64 * 0.37).sin(), vec![], vec![]))
            .collect();
        ModelSpec::new(Arc::new(Iid), blocks, family).unwrap()
    }

    #[test]
    fn iid_normal_bias_is_minus_sigma2_over_n() {
        for n in [5, 20, 50] {
            for s2 in [0.5, 1.0, 200.0] {
                let m = iid(n, DensityFamily::normal());
                let t = DVector::from_vec(vec![0.3, s2]);
                for b in [
                    bias_vector(&m, &t).unwrap().bias,
                    bias_vector_normal_reduced(&m, &t).unwrap().bias,
                    bias_vector_orthogonal(&m, &t).unwrap().bias,
                ] {
                    assert!(b[0].abs() < 1e-10);
                    assert!((b[1] + s2 / n as f64).abs() < 1e-10 * (1.0 + s2), "{b}");
                }
            }
        }
    }

    #[test]
    fn paths_agree_for_heavy_tails() {
        for fam in [
            DensityFamily::student_t(4.0).unwrap(),
            DensityFamily::power_exponential(0.7).unwrap(),
        ] {
            let m = iid(12, fam);
            let t = DVector::from_vec(vec![0.1, 1.7]);
            let g = bias_vector(&m, &t).unwrap().bias;
            let o = bias_vector_orthogonal(&m, &t).unwrap().bias;
            assert!((&g - &o).amax() < 1e-10, "{g} vs {o}");
        }
    }

    #[test]
    fn normal_equations_hold() {
        let m = iid(7, DensityFamily::student_t(5.0).unwrap());
        let t = DVector::from_vec(vec![0.1, 1.7]);
        let bc = bias_vector(&m, &t).unwrap();
        let blocks = assemble_blocks(&m, &t).unwrap();
        let lhs = &bc.fisher * &bc.bias;
        let rhs = blocks.weighted_cross(&bc.xi);
        assert!((lhs - rhs).amax() < 1e-12);
        assert_eq!(bc.per_obs.len(), 7);
        assert_eq!(bc.per_obs[0].phi[0].shape(), (2, 2));
    }

    #[test]
    fn reduced_path_rejects_other_families() {
        let m = iid(5, DensityFamily::cauchy());
        let t = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(bias_vector_normal_reduced(&m, &t), Err(Error::Config(_))));
    }
}
