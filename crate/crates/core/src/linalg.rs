//! Small dense helpers: vec/vech, Kronecker products, Cholesky-based inverses.
//!
//! `vec` stacks columns. `vech` stacks, column by column, the diagonal and
//! the entries above it, so for a 2x2 matrix it yields `(a11, a12, a22)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Largest block dimension for which Kronecker products are materialised.
pub const MAX_BLOCK_DIM: usize = 8;

pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn vech_len(m: usize) -> usize {
    m * (m + 1) / 2
}

pub fn vech(a: &DMatrix<f64>) -> DVector<f64> {
    let m = a.nrows();
    let mut out = Vec::with_capacity(vech_len(m));
    for j in 0..m {
        for i in 0..=j {
            out.push(a[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vech`]: rebuilds the symmetric matrix.
pub fn unvech(v: &[f64], m: usize) -> Result<DMatrix<f64>> {
    if v.len() != vech_len(m) {
        return Err(Error::Dimension(format!(
            "vech of a {m}x{m} matrix needs {} entries, got {}",
            vech_len(m),
            v.len()
        )));
    }
    let mut a = DMatrix::zeros(m, m);
    let mut k = 0;
    for j in 0..m {
        for i in 0..=j {
            a[(i, j)] = v[k];
            a[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(a)
}

/// Derivative of a symmetric matrix with respect to its `k`-th vech entry.
pub fn vech_unit(k: usize, m: usize) -> DMatrix<f64> {
    let mut e = vec![0.0; vech_len(m)];
    e[k] = 1.0;
    unvech(&e, m).expect("index within vech length")
}

/// Duplication matrix `D` with `vec(A) = D vech(A)` for symmetric `A`.
pub fn duplication(m: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m * m, vech_len(m));
    let mut k = 0;
    for j in 0..m {
        for i in 0..=j {
            d[(i + j * m, k)] = 1.0;
            d[(j + i * m, k)] = 1.0;
            k += 1;
        }
    }
    d
}

/// Commutation matrix `K` with `K vec(A) = vec(A^T)` for `A` of shape `rows x cols`.
pub fn commutation(rows: usize, cols: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(rows * cols, rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            k[(j + i * cols, i + j * rows)] = 1.0;
        }
    }
    k
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn check_block_dim(q: usize) -> Result<()> {
    if q == 0 || q > MAX_BLOCK_DIM {
        return Err(Error::Dimension(format!(
            "block dimension {q} outside supported range 1..={MAX_BLOCK_DIM}"
        )));
    }
    Ok(())
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !a.iter().all(|x| x.is_finite()) {
        return Err(Error::LinAlg(format!("{what} has non-finite entries")));
    }
    Cholesky::new(a.clone()).ok_or_else(|| Error::LinAlg(format!("{what} is not positive definite")))
}

pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(a, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn log_det_spd(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Block-diagonal matrix from two square blocks.
pub fn block_diag2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(na + nb, na + nb);
    out.view_mut((0, 0), (na, na)).copy_from(a);
    out.view_mut((na, na), (nb, nb)).copy_from(b);
    out
}

/// Numerical rank from singular values, relative threshold `rtol`.
pub fn numerical_rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
