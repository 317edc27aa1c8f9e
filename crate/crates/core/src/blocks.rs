//! Per-observation matrices `F_i, H_i, M_i, H̃_i, s_i` and the quantities
//! built from them: log-likelihood, score `FᵀHs` and information `FᵀH̃F`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::PsiMoments;
use crate::linalg;
use crate::model::ModelSpec;

/// Everything the fitter needs from one observation at one θ.
#[derive(Clone, Debug)]
pub struct ObservationMatrices {
    pub q: usize,
    pub z: DVector<f64>,
    pub u: f64,
    pub v: f64,
    pub sigma: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
    pub log_det: f64,
    pub loglik: f64,
    /// `q x p`, column r is `a_{i(r)}`.
    pub d: DMatrix<f64>,
    /// `q² x p`, column r is `vec(C_{i(r)})`.
    pub vmat: DMatrix<f64>,
    /// `[D; V]`
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub h_tilde: DMatrix<f64>,
    pub s: DVector<f64>,
    pub constants: PsiMoments,
}

#[derive(Clone, Debug)]
pub struct BlockMatrices {
    pub p: usize,
    pub obs: Vec<ObservationMatrices>,
}

struct Core {
    z: DVector<f64>,
    u: f64,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    log_det: f64,
}

fn core(model: &ModelSpec, theta: &DVector<f64>, i: usize) -> Result<Core> {
    let mu = model.location(theta, i)?;
    let sigma = model.scale(theta, i)?;
    let chol = linalg::cholesky(&sigma, &format!("Sigma_{i}"))?;
    let z = &model.blocks()[i].y - mu;
    let sz = chol.solve(&z);
    let u = z.dot(&sz).max(0.0);
    let log_det = linalg::log_det_spd(&chol);
    let mut sigma_inv = chol.inverse();
    linalg::symmetrize(&mut sigma_inv);
    Ok(Core {
        z,
        u,
        sigma,
        sigma_inv,
        log_det,
    })
}

/// `Σ_i ℓ_i(θ)` with `ℓ_i = -½ log|Σ_i| + log g(u_i)`.
pub fn log_likelihood(model: &ModelSpec, theta: &DVector<f64>) -> Result<f64> {
    model.check_theta(theta)?;
    let mut total = 0.0;
    for i in 0..model.n_obs() {
        let c = core(model, theta, i)?;
        total += -0.5 * c.log_det + model.family().log_g(c.u, c.z.len());
    }
    if !total.is_finite() {
        return Err(Error::Domain("log-likelihood is not finite".into()));
    }
    Ok(total)
}

/// `H_i = blockdiag(Σ⁻¹, ½ Σ⁻¹⊗Σ⁻¹)`.
pub(crate) fn h_matrix(sigma_inv: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::block_diag2(sigma_inv, &(linalg::kron(sigma_inv, sigma_inv) * 0.5))
}

/// `H_i⁻¹ = blockdiag(Σ, 2 Σ⊗Σ)`.
pub(crate) fn h_inverse(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::block_diag2(sigma, &(linalg::kron(sigma, sigma) * 2.0))
}

/// `M_i = blockdiag((4ψ21/q) Σ, 2c Σ⊗Σ + (c−1) vecΣ vecΣᵀ)`.
pub(crate) fn m_matrix(sigma: &DMatrix<f64>, k: &PsiMoments) -> DMatrix<f64> {
    let vs = linalg::vec(sigma);
    let lower = linalg::kron(sigma, sigma) * (2.0 * k.c) + &vs * vs.transpose() * (k.c - 1.0);
    linalg::block_diag2(&(sigma * k.location_weight()), &lower)
}

impl ObservationMatrices {
    fn build(model: &ModelSpec, theta: &DVector<f64>, i: usize) -> Result<Self> {
        let p = model.n_params();
        let Core {
            z,
            u,
            sigma,
            sigma_inv,
            log_det,
        } = core(model, theta, i)?;
        let q = z.len();
        let family = model.family();
        let constants = *model.constants(q);
        let v = family.weight(u, q)?;
        let loglik = -0.5 * log_det + family.log_g(u, q);

        let der = model.derivatives(theta, i, false)?;
        let mut d = DMatrix::zeros(q, p);
        let mut vmat = DMatrix::zeros(q * q, p);
        for r in 0..p {
            d.set_column(r, &der.a[r]);
            vmat.set_column(r, &linalg::vec(&der.c[r]));
        }
        let mut f = DMatrix::zeros(q + q * q, p);
        f.view_mut((0, 0), (q, p)).copy_from(&d);
        f.view_mut((q, 0), (q * q, p)).copy_from(&vmat);

        let h = h_matrix(&sigma_inv);
        let m = m_matrix(&sigma, &constants);
        // Normal: M = H⁻¹ so H̃ = H; take it verbatim rather than through round-off.
        let h_tilde = if family.is_normal() {
            h.clone()
        } else {
            let mut ht = &h * &m * &h;
            linalg::symmetrize(&mut ht);
            ht
        };

        let mut s = DVector::zeros(q + q * q);
        s.rows_mut(0, q).copy_from(&(&z * v));
        let inner = &sigma - &z * z.transpose() * v;
        s.rows_mut(q, q * q).copy_from(&(-linalg::vec(&inner)));

        Ok(Self {
            q,
            z,
            u,
            v,
            sigma,
            sigma_inv,
            log_det,
            loglik,
            d,
            vmat,
            f,
            h,
            m,
            h_tilde,
            s,
            constants,
        })
    }
}

/// Builds the per-observation matrices at θ.
pub fn assemble_blocks(model: &ModelSpec, theta: &DVector<f64>) -> Result<BlockMatrices> {
    model.check_theta(theta)?;
    let obs = (0..model.n_obs())
        .map(|i| ObservationMatrices::build(model, theta, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockMatrices {
        p: model.n_params(),
        obs,
    })
}

impl BlockMatrices {
    pub fn loglik(&self) -> f64 {
        self.obs.iter().map(|o| o.loglik).sum()
    }

    /// `U = Σ F_iᵀ H_i s_i`
    pub fn score(&self) -> DVector<f64> {
        self.obs
            .iter()
            .fold(DVector::zeros(self.p), |acc, o| acc + o.f.transpose() * (&o.h * &o.s))
    }

    /// `K = Σ F_iᵀ H̃_i F_i`
    pub fn fisher(&self) -> DMatrix<f64> {
        let mut k = self.obs.iter().fold(DMatrix::zeros(self.p, self.p), |acc, o| {
            acc + o.f.transpose() * &o.h_tilde * &o.f
        });
        linalg::symmetrize(&mut k);
        k
    }

    /// `Σ F_iᵀ H̃_i x_i` for a stacked vector `x`.
    pub fn weighted_cross(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut off = 0;
        let mut out = DVector::zeros(self.p);
        for o in &self.obs {
            let len = o.f.nrows();
            out += o.f.transpose() * (&o.h_tilde * x.rows(off, len));
            off += len;
        }
        out
    }

    /// Total length `Σ (q_i + q_i²)` of stacked vectors.
    pub fn stacked_len(&self) -> usize {
        self.obs.iter().map(|o| o.f.nrows()).sum()
    }

    pub fn stacked_f(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.stacked_len(), self.p);
        let mut off = 0;
        for o in &self.obs {
            out.view_mut((off, 0), (o.f.nrows(), self.p)).copy_from(&o.f);
            off += o.f.nrows();
        }
        out
    }

    pub fn stacked_s(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.stacked_len());
        let mut off = 0;
        for o in &self.obs {
            out.rows_mut(off, o.s.len()).copy_from(&o.s);
            off += o.s.len();
        }
        out
    }

    fn block_diag(&self, pick: impl Fn(&ObservationMatrices) -> &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.stacked_len();
        let mut out = DMatrix::zeros(n, n);
        let mut off = 0;
        for o in &self.obs {
            let b = pick(o);
            out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
            off += b.nrows();
        }
        out
    }

    pub fn h_block_diag(&self) -> DMatrix<f64> {
        self.block_diag(|o| &o.h)
    }

    pub fn m_block_diag(&self) -> DMatrix<f64> {
        self.block_diag(|o| &o.m)
    }

    pub fn h_tilde_block_diag(&self) -> DMatrix<f64> {
        self.block_diag(|o| &o.h_tilde)
    }

    /// Numerical column rank of the stacked `F`.
    pub fn f_rank(&self) -> usize {
        linalg::numerical_rank(&self.stacked_f(), 1e-10)
    }

    /// `RankError` when the stacked `F` is column-rank deficient.
    pub fn check_rank(&self) -> Result<()> {
        let rank = self.f_rank();
        if rank < self.p {
            return Err(Error::Rank { rank, p: self.p });
        }
        Ok(())
    }
}

pub fn score(model: &ModelSpec, theta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(assemble_blocks(model, theta)?.score())
}

pub fn fisher_information(model: &ModelSpec, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(assemble_blocks(model, theta)?.fisher())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::family::DensityFamily;
    use crate::model::{ObservationBlock, Structure};

    /// iid location-scale, θ = (μ, σ²).
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
    }

    fn iid(ys: &[f64], family: DensityFamily) -> ModelSpec {
        let blocks = ys
            .iter()
            .map(|&y| ObservationBlock::scalar(y, vec![], vec![]))
            .collect();
        ModelSpec::new(Arc::new(Iid), blocks, family).unwrap()
    }

    fn theta(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn loglik_examples() {
        let m = iid(&[0.0], DensityFamily::normal());
        let l = log_likelihood(&m, &theta(&[0.0, 1.0])).unwrap();
        assert!((l + 0.918_938_533_204_672_7).abs() < 1e-12);

        // t4 density at 0: Γ(5/2) / (Γ(2) sqrt(4π))
        let m = iid(&[0.0], DensityFamily::student_t(4.0).unwrap());
        let l = log_likelihood(&m, &theta(&[0.0, 1.0])).unwrap();
        let expect = (0.75 * std::f64::consts::PI.sqrt() / (4.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
    }

    #[test]
    fn normal_m_inverts_h() {
        let m = iid(&[0.3, -1.2, 2.0], DensityFamily::normal());
        let b = assemble_blocks(&m, &theta(&[0.1, 2.5])).unwrap();
        for o in &b.obs {
            assert_eq!(o.v, 1.0);
            let prod = &o.m * &o.h;
            assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-14);
            assert_eq!(o.h, o.h_tilde);
            assert_eq!(o.vmat[(0, 1)], 1.0);
        }
    }

    #[test]
    fn student_m_location_entry() {
        let m = iid(&[0.3], DensityFamily::student_t(4.0).unwrap());
        let b = assemble_blocks(&m, &theta(&[0.0, 3.0])).unwrap();
        assert!((b.obs[0].m[(0, 0)] - 5.0 / 7.0 * 3.0).abs() < 1e-14);
    }

    #[test]
    fn normal_iid_information() {
        let ys = [0.3, -1.2, 2.0, 0.7];
        let m = iid(&ys, DensityFamily::normal());
        let k = fisher_information(&m, &theta(&[0.1, 2.5])).unwrap();
        assert!((k[(0, 0)] - 4.0 / 2.5).abs() < 1e-13);
        assert!((k[(1, 1)] - 4.0 / (2.0 * 6.25)).abs() < 1e-13);
        assert!(k[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn score_vanishes_at_closed_form_mle() {
        let ys = [0.3, -1.2, 2.0, 0.7];
        let mean = ys.iter().sum::<f64>() / 4.0;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 4.0;
        let m = iid(&ys, DensityFamily::normal());
        let u = score(&m, &theta(&[mean, var])).unwrap();
        assert!(u.amax() < 1e-13);
    }

    #[test]
    fn score_matches_gradient() {
        for fam in [
            DensityFamily::normal(),
            DensityFamily::student_t(4.0).unwrap(),
            DensityFamily::power_exponential(0.7).unwrap(),
        ] {
            let m = iid(&[0.3, -1.2, 2.0, 0.7], fam);
            let t = theta(&[0.2, 1.7]);
            let u = score(&m, &t).unwrap();
            for r in 0..2 {
                let h = 1e-6 * (1.0 + t[r].abs());
                let mut up = t.clone();
                up[r] += h;
                let mut dn = t.clone();
                dn[r] -= h;
                let fd = (log_likelihood(&m, &up).unwrap() - log_likelihood(&m, &dn).unwrap()) / (2.0 * h);
                assert!((fd - u[r]).abs() < 1e-6 * (1.0 + u[r].abs()), "{fd} vs {}", u[r]);
            }
        }
    }

    #[test]
    fn stacked_forms_agree_with_sums() {
        let m = iid(&[0.3, -1.2, 2.0], DensityFamily::student_t(3.0).unwrap());
        let b = assemble_blocks(&m, &theta(&[0.0, 1.3])).unwrap();
        let f = b.stacked_f();
        let k = f.transpose() * b.h_tilde_block_diag() * &f;
        assert!((k - b.fisher()).amax() < 1e-13);
        let u = f.transpose() * b.h_block_diag() * b.stacked_s();
        assert!((u - b.score()).amax() < 1e-13);
        assert_eq!(b.f_rank(), 2);
    }

    #[test]
    fn rank_deficiency_reported() {
        // The second parameter never enters μ or Σ.
        #[derive(Debug)]
        struct Dead;
        impl Structure for Dead {
            fn n_params(&self) -> usize {
                2
            }
            fn location(&self, t: &DVector<f64>, _: &ObservationBlock) -> Result<DVector<f64>> {
                Ok(DVector::from_element(1, t[0]))
            }
            fn scale(&self, _: &DVector<f64>, _: &ObservationBlock) -> Result<DMatrix<f64>> {
                Ok(DMatrix::from_element(1, 1, 1.0))
            }
        }
        let blocks = vec![ObservationBlock::scalar(1.0, vec![], vec![]); 3];
        let m = ModelSpec::new(Arc::new(Dead), blocks, DensityFamily::normal()).unwrap();
        let b = assemble_blocks(&m, &theta(&[0.0, 0.0])).unwrap();
        assert!(matches!(b.check_rank(), Err(Error::Rank { rank: 1, p: 2 })));
    }
}
