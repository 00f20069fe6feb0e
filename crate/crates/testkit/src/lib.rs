//! Reference oracles for the `lord` test suites.
//!
//! Everything here is deliberately naive: dense `f64` arithmetic, brute-force
//! loops and textbook Jacobi sweeps. None of it shares code with `lord-core`,
//! so a passing comparison means two unrelated routes agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Row-major dense `f64` matrix used only by the oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Self {
        assert_eq!(data.len(), rows * cols);
        Dense { rows, cols, data: data.iter().map(|&x| x as f64).collect() }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Dense) -> Dense {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Dense {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&x| x as f32).collect()
    }
}

/// Textbook triple loop, i-j-k order, `f64` accumulation.
pub fn naive_matmul(a: &Dense, b: &Dense) -> Dense {
    assert_eq!(a.cols, b.rows);
    let mut c = Dense::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.at(i, k) * b.at(k, j);
            }
            c.set(i, j, acc);
        }
    }
    c
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Sweeps until the off-diagonal mass is below `1e-22` of the total.
pub fn jacobi_eigen(sym: &Dense) -> (Vec<f64>, Dense) {
    assert_eq!(sym.rows, sym.cols);
    let n = sym.rows;
    let mut a = sym.clone();
    let mut v = Dense::identity(n);
    let total: f64 = a.data.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += a.at(p, q) * a.at(p, q);
                }
            }
        }
        if off <= 1e-22 * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.at(j, j).partial_cmp(&a.at(i, i)).unwrap());
    let values = order.iter().map(|&i| a.at(i, i)).collect();
    let mut vecs = Dense::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, dst, v.at(k, src));
        }
    }
    (values, vecs)
}

/// One-sided (Hestenes) Jacobi SVD. Returns all singular values, descending.
pub fn jacobi_singular_values(w: &Dense) -> Vec<f64> {
    // Work on the orientation with fewer columns.
    let a = if w.cols <= w.rows { w.clone() } else { w.transpose() };
    let (m, n) = (a.rows, a.cols);
    let mut u = a;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..m {
                    let up = u.at(k, p);
                    let uq = u.at(k, q);
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let up = u.at(k, p);
                    let uq = u.at(k, q);
                    u.set(k, p, c * up - s * uq);
                    u.set(k, q, s * up + c * uq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|k| u.at(k, j) * u.at(k, j)).sum::<f64>().sqrt())
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// `sqrt(sum_{i >= r} s_i^2)` for a descending spectrum.
pub fn discarded_norm(singular_values: &[f64], r: usize) -> f64 {
    singular_values[r..].iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// Population covariance of the columns of `y` (rows = features), two passes.
pub fn two_pass_covariance(y: &Dense) -> Dense {
    let (d, n) = (y.rows, y.cols);
    let mean: Vec<f64> = (0..d)
        .map(|i| (0..n).map(|t| y.at(i, t)).sum::<f64>() / n as f64)
        .collect();
    let mut c = Dense::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for t in 0..n {
                acc += (y.at(i, t) - mean[i]) * (y.at(j, t) - mean[j]);
            }
            c.set(i, j, acc / n as f64);
        }
    }
    c
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Seeded standard-normal matrix.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Dense {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dense {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    }
}

/// Frobenius relative error `|a - b| / |b|`, with `|b| = 0` treated as absolute.
pub fn rel_err(a: &Dense, b: &Dense) -> f64 {
    let num = a.sub(b).frobenius();
    let den = b.frobenius();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let m = Dense { rows: 2, cols: 2, data: vec![2.0, 1.0, 1.0, 2.0] };
        let (vals, _) = jacobi_eigen(&m);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_jacobi_matches_eigen_of_gram() {
        let w = gaussian(7, 5, 3);
        let s = jacobi_singular_values(&w);
        let (vals, _) = jacobi_eigen(&naive_matmul(&w.transpose(), &w));
        for (si, li) in s.iter().zip(vals) {
            assert!((si * si - li).abs() < 1e-9 * li.abs().max(1.0));
        }
    }
}
