use crate::linalg::{matmul_tn, Matrix};
use crate::planner::NormKind;

const NORM_EPS: f64 = 1e-5;
const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub kind: NormKind,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl Norm {
    pub fn identity(kind: NormKind, d: usize) -> Self {
        let bias = (kind == NormKind::LayerNorm).then(|| vec![0.0; d]);
        Norm { kind, weight: vec![1.0; d], bias }
    }

    /// Normalize every column of `x` (`d × T`).
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let (d, t) = x.shape();
        let mut mean = vec![0.0f64; t];
        let mut sq = vec![0.0f64; t];
        for i in 0..d {
            for (j, &v) in x.row(i).iter().enumerate() {
                mean[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
        }
        let mut shift = vec![0.0f64; t];
        let mut inv = vec![0.0f64; t];
        for j in 0..t {
            let m = mean[j] / d as f64;
            let ms = sq[j] / d as f64;
            match self.kind {
                NormKind::LayerNorm => {
                    shift[j] = m;
                    inv[j] = 1.0 / ((ms - m * m).max(0.0) + NORM_EPS).sqrt();
                }
                NormKind::RmsNorm => inv[j] = 1.0 / (ms + NORM_EPS).sqrt(),
            }
        }
        let mut out = x.clone();
        for i in 0..d {
            let w = self.weight[i] as f64;
            let b = self.bias.as_ref().map_or(0.0, |b| b[i] as f64);
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (((*v as f64) - shift[j]) * inv[j] * w + b) as f32;
            }
        }
        out
    }
}

pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    (0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())) as f32
}

pub fn silu(x: f32) -> f32 {
    let x = x as f64;
    (x / (1.0 + (-x).exp())) as f32
}

/// Rotate-half rotary embedding applied in place to a `head_dim × T` block
/// whose first column sits at position `offset`.
pub fn apply_rotary(block: &mut Matrix, offset: usize) {
    let (hd, t) = block.shape();
    let half = hd / 2;
    for i in 0..half {
        let freq = ROPE_BASE.powf(-2.0 * i as f64 / hd as f64);
        for col in 0..t {
            let (s, c) = ((offset + col) as f64 * freq).sin_cos();
            let a = block.get(i, col) as f64;
            let b = block.get(i + half, col) as f64;
            block.set(i, col, (a * c - b * s) as f32);
            block.set(i + half, col, (a * s + b * c) as f32);
        }
    }
}

/// Causal scaled dot-product attention for one head; `q`, `k`, `v` are
/// `head_dim × T`. Returns `head_dim × T`.
pub fn causal_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let (hd, t) = q.shape();
    let scale = 1.0 / (hd as f64).sqrt();
    // scores[i][j] = q_i · k_j
    let scores = matmul_tn(q, k).expect("q and k share head_dim");
    // probs is stored transposed (key-major) so that out = v · probsᵀ is a
    // plain product.
    let mut probs_t = Matrix::zeros(t, t);
    let mut row = vec![0.0f64; t];
    for i in 0..t {
        let s = &scores.row(i)[..=i];
        let mut max = f64::NEG_INFINITY;
        for (j, &x) in s.iter().enumerate() {
            row[j] = x as f64 * scale;
            max = max.max(row[j]);
        }
        let mut total = 0.0;
        for r in row.iter_mut().take(i + 1) {
            *r = (*r - max).exp();
            total += *r;
        }
        for (j, r) in row.iter().take(i + 1).enumerate() {
            probs_t.set(j, i, (r / total) as f32);
        }
    }
    debug_assert_eq!(v.rows(), hd);
    v.matmul(&probs_t).expect("v is head_dim × T")
}

/// `log softmax(logits)[target]`, with max subtraction.
pub fn log_prob(logits: &[f32], target: usize) -> f64 {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
    let lse = logits.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln() + max;
    logits[target] as f64 - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_zero_mean_unit_variance() {
        let x = Matrix::from_fn(4, 2, |i, j| (i as f32 + 1.0) * (j as f32 + 1.0));
        let y = Norm::identity(NormKind::LayerNorm, 4).apply(&x);
        for j in 0..2 {
            let col = y.column(j);
            let m: f32 = col.iter().sum::<f32>() / 4.0;
            let v: f32 = col.iter().map(|c| (c - m) * (c - m)).sum::<f32>() / 4.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn attention_first_position_copies_value() {
        let q = Matrix::from_fn(2, 3, |i, j| (i + j) as f32);
        let k = Matrix::from_fn(2, 3, |i, j| (i * j) as f32 - 1.0);
        let v = Matrix::from_fn(2, 3, |i, j| (10 * i + j) as f32);
        let out = causal_attention(&q, &k, &v);
        assert_eq!(out.get(0, 0), v.get(0, 0));
        assert_eq!(out.get(1, 0), v.get(1, 0));
    }

    #[test]
    fn log_prob_of_uniform() {
        let l = vec![0.3f32; 8];
        assert!((log_prob(&l, 5) + (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn rotary_preserves_norm() {
        let mut b = Matrix::from_fn(4, 5, |i, j| (i as f32 - 1.5) * (j as f32 + 0.5));
        let before: Vec<f64> = (0..5).map(|j| b.column(j).iter().map(|&x| (x * x) as f64).sum()).collect();
        apply_rotary(&mut b, 0);
        for (j, n) in before.iter().enumerate() {
            let after: f64 = b.column(j).iter().map(|&x| (x * x) as f64).sum();
            assert!((after - n).abs() < 1e-4 * n.max(1.0));
        }
    }
}
