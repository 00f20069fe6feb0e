//! Symmetric eigendecomposition.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! algorithm with Wilkinson-style shifts (the EISPACK `tred2`/`tql2` pair),
//! all in `f64`. Results are sorted by descending eigenvalue with index
//! tie-break, and each eigenvector is oriented so that its first nonzero
//! entry is non-negative, which makes factorizations reproducible.

use crate::error::{LordError, Result};
use crate::linalg::Matrix;

/// Entries with magnitude at or below this are treated as zero when picking
/// an eigenvector's orientation.
const SIGN_EPS: f64 = 1e-9;

/// Maximum QL iterations spent on a single eigenvalue.
const MAX_QL_ITERS: usize = 64;

/// Top-`k` eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigFactors {
    /// `d × k`, eigenvectors as columns.
    pub vectors: Matrix,
    /// Length `k`, descending.
    pub values: Vec<f64>,
}

impl EigFactors {
    pub fn k(&self) -> usize {
        self.values.len()
    }
}

/// Full eigendecomposition in `f64`.
#[derive(Debug, Clone)]
pub(crate) struct SymEig {
    pub n: usize,
    /// Descending.
    pub values: Vec<f64>,
    /// Row `i` is the unit eigenvector for `values[i]` (row-major `n × n`).
    pub vectors: Vec<f64>,
}

impl SymEig {
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n..(i + 1) * self.n]
    }

    /// First `k` eigenvectors as the columns of a `n × k` row-major buffer.
    pub fn leading_columns(&self, k: usize) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * k];
        for c in 0..k {
            for (r, &x) in self.vector(c).iter().enumerate() {
                out[r * k + c] = x;
            }
        }
        out
    }
}

/// Top-`k` eigenpairs of the symmetric matrix `c`.
///
/// `c` is symmetrized as `(c + cᵀ)/2` before solving; inputs whose
/// asymmetry exceeds `1e-5 · |c|_F` are rejected.
pub fn eig_sym(c: &Matrix, k: usize) -> Result<EigFactors> {
    let (n, cols) = c.shape();
    if n != cols {
        return Err(LordError::shape(format!("eig_sym needs a square matrix, got {n}x{cols}")));
    }
    if k == 0 || k > n {
        return Err(LordError::Rank { rank: k, max: n });
    }
    let a = c.to_f64();
    let mut asym = 0.0;
    let mut norm = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = a[i * n + j] - a[j * n + i];
            asym += d * d;
            norm += a[i * n + j] * a[i * n + j];
        }
    }
    if asym.sqrt() > 1e-5 * norm.sqrt() {
        return Err(LordError::shape(format!(
            "matrix is not symmetric (|C - Cᵀ|_F = {:.3e}, |C|_F = {:.3e})",
            asym.sqrt(),
            norm.sqrt()
        )));
    }
    let eig = sym_eig_f64(&a, n)?;
    let vectors = Matrix::from_f64(n, k, &eig.leading_columns(k))?;
    Ok(EigFactors { vectors, values: eig.values[..k].to_vec() })
}

/// Symmetrizes `a` (row-major `n × n`) and returns all eigenpairs.
pub(crate) fn sym_eig_f64(a: &[f64], n: usize) -> Result<SymEig> {
    assert_eq!(a.len(), n * n);
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(LordError::Numerical("eigensolver input has non-finite entries".into()));
    }
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tridiagonalize(&mut v, &mut d, &mut e, n);
    // QL rotates pairs of eigenvector columns; work on the transpose so those
    // columns are contiguous rows.
    let mut z = transpose(&v, n);
    ql_implicit(&mut d, &mut e, &mut z, n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    let mut vectors = Vec::with_capacity(n * n);
    for &src in &order {
        let row = &z[src * n..(src + 1) * n];
        let flip = row.iter().find(|x| x.abs() > SIGN_EPS).is_some_and(|&x| x < 0.0);
        vectors.extend(row.iter().map(|&x| if flip { -x } else { x }));
    }
    let values = order.iter().map(|&i| d[i]).collect();
    Ok(SymEig { n, values, vectors })
}

fn transpose(v: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = v[i * n + j];
        }
    }
    t
}

/// Householder tridiagonalization. On return `v` holds the accumulated
/// orthogonal transform, `d` the diagonal and `e[1..]` the subdiagonal.
fn tridiagonalize(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..n.saturating_sub(1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)`. `z` holds eigenvectors as rows.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERS {
                    return Err(LordError::Numerical(format!(
                        "QL iteration did not converge for eigenvalue {l} of {n} \
                         after {MAX_QL_ITERS} sweeps (residual off-diagonal {:.3e}, scale {:.3e})",
                        e[l].abs(),
                        tst1
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (lo, hi) = z.split_at_mut((i + 1) * n);
                    let zi = &mut lo[i * n..];
                    let zi1 = &mut hi[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(c: &Matrix, f: &EigFactors) -> f64 {
        let cq = c.matmul(&f.vectors).unwrap();
        let mut ql = f.vectors.clone();
        for i in 0..ql.rows() {
            for j in 0..ql.cols() {
                ql.set(i, j, ql.get(i, j) * f.values[j] as f32);
            }
        }
        cq.relative_error(&ql).unwrap()
    }

    #[test]
    fn diagonal_input() {
        let mut c = Matrix::zeros(3, 3);
        c.set(0, 0, 3.0);
        c.set(1, 1, 2.0);
        c.set(2, 2, 1.0);
        let f = eig_sym(&c, 2).unwrap();
        assert_eq!(f.values.len(), 2);
        assert!((f.values[0] - 3.0).abs() < 1e-12);
        assert!((f.values[1] - 2.0).abs() < 1e-12);
        assert_eq!(f.vectors.column(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(f.vectors.column(1), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn unsorted_diagonal_is_sorted() {
        let mut c = Matrix::zeros(4, 4);
        for (i, v) in [1.0, 5.0, -2.0, 3.0].into_iter().enumerate() {
            c.set(i, i, v);
        }
        let f = eig_sym(&c, 4).unwrap();
        assert_eq!(f.values, vec![5.0, 3.0, 1.0, -2.0]);
        assert_eq!(f.vectors.column(0), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_spectrum() {
        let f = eig_sym(&Matrix::identity(6), 6).unwrap();
        assert!(f.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let qtq = f.vectors.transpose().matmul(&f.vectors).unwrap();
        assert!(qtq.relative_error(&Matrix::identity(6)).unwrap() < 1e-6);
    }

    #[test]
    fn small_dense_residual() {
        let c = Matrix::new(3, 3, vec![4.0, 1.0, -2.0, 1.0, 2.0, 0.0, -2.0, 0.0, 3.0]).unwrap();
        let f = eig_sym(&c, 3).unwrap();
        assert!(residual(&c, &f) < 1e-6);
        let trace: f64 = f.values.iter().sum();
        assert!((trace - 9.0).abs() < 1e-10);
    }

    #[test]
    fn one_by_one() {
        let c = Matrix::new(1, 1, vec![-7.5]).unwrap();
        let f = eig_sym(&c, 1).unwrap();
        assert_eq!(f.values, vec![-7.5]);
        assert_eq!(f.vectors.as_slice(), &[1.0]);
    }

    #[test]
    fn sign_convention_first_nonzero_positive() {
        let c = Matrix::new(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let f = eig_sym(&c, 2).unwrap();
        for j in 0..2 {
            let col = f.vectors.column(j);
            let first = col.iter().find(|x| x.abs() > 1e-6).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(eig_sym(&Matrix::zeros(2, 3), 1), Err(LordError::Shape(_))));
        assert!(matches!(eig_sym(&Matrix::identity(3), 4), Err(LordError::Rank { .. })));
        assert!(matches!(eig_sym(&Matrix::identity(3), 0), Err(LordError::Rank { .. })));
        let skew = Matrix::new(2, 2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        assert!(matches!(eig_sym(&skew, 1), Err(LordError::Shape(_))));
    }
}
