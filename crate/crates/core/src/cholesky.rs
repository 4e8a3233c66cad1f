//! Unconstrained parameterization of covariance matrices.
//!
//! A p×p SPD matrix Σ = L Lᵀ is represented by the column-major lower
//! triangle of L with the diagonal stored on the log scale. Every real
//! vector of length p(p+1)/2 maps to an SPD matrix and the map is a
//! bijection onto SPD matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn tri_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Dimension p recovered from a triangle length, if it is one.
pub fn dim_from_tri_len(len: usize) -> Option<usize> {
    let p = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (tri_len(p) == len).then_some(p)
}

/// Column-major lower-triangle index pairs (row, col), row ≥ col.
pub fn lower_indices(p: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::with_capacity(tri_len(p));
    for c in 0..p {
        for r in c..p {
            idx.push((r, c));
        }
    }
    idx
}

pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    lower_indices(m.nrows()).into_iter().map(|(r, c)| m[(r, c)]).collect()
}

pub fn unvech(v: &[f64]) -> Result<DMatrix<f64>> {
    let p = dim_from_tri_len(v.len())
        .ok_or_else(|| Error::InvalidParams(format!("length {} is not triangular", v.len())))?;
    let mut m = DMatrix::zeros(p, p);
    for (k, (r, c)) in lower_indices(p).into_iter().enumerate() {
        m[(r, c)] = v[k];
        m[(c, r)] = v[k];
    }
    Ok(m)
}

/// SPD matrix → log-Cholesky vector.
pub fn to_log_cholesky(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParams("covariance matrix is not positive definite".into()))?;
    let l = chol.l();
    Ok(lower_indices(sigma.nrows())
        .into_iter()
        .map(|(r, c)| if r == c { l[(r, c)].ln() } else { l[(r, c)] })
        .collect())
}

/// Lower-triangular factor from a log-Cholesky vector.
pub fn factor_from_log_cholesky(theta: &[f64], p: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(p, p);
    for (k, (r, c)) in lower_indices(p).into_iter().enumerate() {
        l[(r, c)] = if r == c { theta[k].exp() } else { theta[k] };
    }
    l
}

/// Log-Cholesky vector → SPD matrix (exactly symmetric).
pub fn from_log_cholesky(theta: &[f64], p: usize) -> DMatrix<f64> {
    let l = factor_from_log_cholesky(theta, p);
    let mut s = &l * l.transpose();
    symmetrize(&mut s);
    s
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    let sym = (0..m.nrows()).all(|r| {
        (0..m.ncols()).all(|c| (m[(r, c)] - m[(c, r)]).abs() <= 1e-12 * (1.0 + m[(r, c)].abs()))
    });
    sym && m.clone().symmetric_eigenvalues().iter().all(|&e| e > 0.0)
}
