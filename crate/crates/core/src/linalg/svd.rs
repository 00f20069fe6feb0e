//! Truncated SVD through the eigendecomposition of the smaller Gram matrix.

use crate::error::{LordError, Result};
use crate::linalg::eig::sym_eig_f64;
use crate::linalg::matrix::dgemm;
use crate::linalg::Matrix;

/// Singular values at or below `ZERO_SV · σ₁` are treated as exact zeros;
/// their singular vectors are completed to an orthonormal set instead of
/// being derived by division.
const ZERO_SV: f64 = 1e-10;

/// Top-`k` singular triplets: `W ≈ U · diag(S) · Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `d1 × k`, orthonormal columns.
    pub u: Matrix,
    /// Length `k`, non-negative, descending.
    pub s: Vec<f64>,
    /// `d2 × k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    pub fn k(&self) -> usize {
        self.s.len()
    }

    /// `U · diag(S) · Vᵀ`, accumulated in `f64`.
    pub fn reconstruct(&self) -> Matrix {
        let (d1, k) = self.u.shape();
        let d2 = self.v.rows();
        let mut us = self.u.to_f64();
        for i in 0..d1 {
            for j in 0..k {
                us[i * k + j] *= self.s[j];
            }
        }
        let vt = self.v.transpose().to_f64();
        let w = dgemm(&us, &vt, d1, k, d2);
        Matrix::from_f64(d1, d2, &w).expect("non-empty reconstruction")
    }
}

/// Best rank-`r` approximation factors of `w` in Frobenius norm.
pub fn svd_truncate(w: &Matrix, r: usize) -> Result<SvdFactors> {
    let (d1, d2) = w.shape();
    let dmin = d1.min(d2);
    if r == 0 || r > dmin {
        return Err(LordError::Rank { rank: r, max: dmin });
    }
    if !w.all_finite() {
        return Err(LordError::Numerical("svd input has non-finite entries".into()));
    }

    // Eigen-solve the smaller Gram matrix; its eigenvectors are the singular
    // vectors on the short side. The long side follows by projection.
    let wide = d1 <= d2;
    let a = w.to_f64();
    let at = w.transpose().to_f64();
    let (short, long) = if wide { (d1, d2) } else { (d2, d1) };
    // `m` is the short×long orientation of W.
    let m: &[f64] = if wide { &a } else { &at };
    let mt: &[f64] = if wide { &at } else { &a };
    let gram = dgemm(m, mt, short, long, short);
    let eig = sym_eig_f64(&gram, short)?;

    let sigma: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let cutoff = ZERO_SV * sigma[0];

    let short_vecs = eig.leading_columns(r);
    // long_vecs[c] = Mᵀ · short_vec[c] / σ_c, column-major while we build it.
    let mut long_cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    for c in 0..r {
        let sv = eig.vector(c);
        if sigma[c] > cutoff && sigma[c] > 0.0 {
            let mut col = vec![0.0; long];
            for (i, &si) in sv.iter().enumerate() {
                let row = &m[i * long..(i + 1) * long];
                for (x, &mij) in col.iter_mut().zip(row) {
                    *x += si * mij;
                }
            }
            col.iter_mut().for_each(|x| *x /= sigma[c]);
            // Small σ leaves the projected column dominated by rounding
            // noise; re-orthogonalize and fall back to completion if little
            // of it survives.
            match orthonormalize(col, &long_cols) {
                Some(col) => long_cols.push(col),
                None => long_cols.push(complete_basis(&long_cols, long)?),
            }
        } else {
            long_cols.push(complete_basis(&long_cols, long)?);
        }
    }
    let mut long_buf = vec![0.0; long * r];
    for (c, col) in long_cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            long_buf[i * r + c] = x;
        }
    }

    let short_m = Matrix::from_f64(short, r, &short_vecs)?;
    let long_m = Matrix::from_f64(long, r, &long_buf)?;
    let s: Vec<f64> = sigma[..r].iter().map(|&x| if x > cutoff { x } else { 0.0 }).collect();
    let (u, v) = if wide { (short_m, long_m) } else { (long_m, short_m) };
    Ok(SvdFactors { u, s, v })
}

fn orthonormalize(mut x: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let before = x.iter().map(|p| p * p).sum::<f64>().sqrt();
    for _ in 0..2 {
        for b in basis {
            let dot: f64 = x.iter().zip(b).map(|(p, q)| p * q).sum();
            x.iter_mut().zip(b).for_each(|(p, q)| *p -= dot * q);
        }
    }
    let norm = x.iter().map(|p| p * p).sum::<f64>().sqrt();
    if norm < 0.5 * before || norm == 0.0 {
        return None;
    }
    x.iter_mut().for_each(|p| *p /= norm);
    Some(x)
}

/// A unit vector orthogonal to every vector in `basis`, built by
/// Gram-Schmidt on the standard basis vectors in index order.
fn complete_basis(basis: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    for e in 0..dim {
        let mut x = vec![0.0; dim];
        x[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let dot: f64 = x.iter().zip(b).map(|(p, q)| p * q).sum();
                x.iter_mut().zip(b).for_each(|(p, q)| *p -= dot * q);
            }
        }
        let norm = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        if norm > 1e-6 {
            x.iter_mut().for_each(|p| *p /= norm);
            return Ok(x);
        }
    }
    Err(LordError::Numerical(format!(
        "could not complete an orthonormal basis of dimension {dim} from {} vectors",
        basis.len()
    )))
}
