//! Replacing a dense linear layer `y = W x + b` by a factored one
//! `y = B (A x) + b̃`.
//!
//! Two factorizations are provided:
//!
//! * [`decompose_svd`] keeps the top singular triplets of `W`, so `B = U_r S_r`
//!   and `A = V_rᵀ`. This is optimal for `W` itself but ignores the data.
//! * [`decompose_afm`] (atomic feature mimicking) takes the top eigenvectors
//!   `Q̂_r` of the covariance of the layer's *outputs* over calibration data
//!   and sets `B = Q̂_r`, `A = Q̂_rᵀ W`. The layer then reproduces the
//!   projection of its outputs onto their dominant subspace.
//!
//! Layers that read the same input can be stacked into a [`LayerGroup`] and
//! share one bottleneck `A`, see [`decompose_group`].

use crate::error::{LordError, Result};
use crate::linalg::{dgemm, dgemm_tn, svd_truncate, sym_eig_f64, Matrix, OutputStats};

/// A dense linear layer `y = W x + b`, `W` is `d1 × d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub name: String,
    pub w: Matrix,
    pub bias: Option<Vec<f32>>,
}

impl DenseLayer {
    pub fn new(name: impl Into<String>, w: Matrix, bias: Option<Vec<f32>>) -> Result<Self> {
        let name = name.into();
        if let Some(b) = &bias {
            if b.len() != w.rows() {
                return Err(LordError::shape(format!(
                    "layer `{name}`: bias length {} does not match d1 = {}",
                    b.len(),
                    w.rows()
                )));
            }
        }
        Ok(DenseLayer { name, w, bias })
    }

    pub fn d1(&self) -> usize {
        self.w.rows()
    }

    pub fn d2(&self) -> usize {
        self.w.cols()
    }

    pub fn params(&self) -> u64 {
        (self.w.len() + self.bias.as_ref().map_or(0, Vec::len)) as u64
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = self.w.matmul(x)?;
        if let Some(b) = &self.bias {
            y.add_row_bias(b)?;
        }
        Ok(y)
    }
}

/// A factored linear layer `y = B (A x) + b̃` of rank `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredLayer {
    pub name: String,
    /// `r × d2`.
    pub a: Matrix,
    /// `d1 × r`.
    pub b: Matrix,
    pub bias: Option<Vec<f32>>,
}

impl FactoredLayer {
    pub fn new(name: impl Into<String>, a: Matrix, b: Matrix, bias: Option<Vec<f32>>) -> Result<Self> {
        let name = name.into();
        if a.rows() != b.cols() {
            return Err(LordError::shape(format!(
                "layer `{name}`: A is {}x{} but B is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if let Some(bias) = &bias {
            if bias.len() != b.rows() {
                return Err(LordError::shape(format!(
                    "layer `{name}`: bias length {} does not match d1 = {}",
                    bias.len(),
                    b.rows()
                )));
            }
        }
        Ok(FactoredLayer { name, a, b, bias })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn d1(&self) -> usize {
        self.b.rows()
    }

    pub fn d2(&self) -> usize {
        self.a.cols()
    }

    /// `r (d1 + d2)` plus the bias.
    pub fn params(&self) -> u64 {
        (self.a.len() + self.b.len() + self.bias.as_ref().map_or(0, Vec::len)) as u64
    }

    /// Multiply-adds for `n` input columns, bias excluded.
    pub fn flops(&self, n: usize) -> u64 {
        (n * self.rank() * (self.d1() + self.d2())) as u64
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        factored_forward(self, x)
    }

    /// The dense `B · A`. Only for tests and diagnostics; inference never
    /// materializes it.
    pub fn reconstruct(&self) -> Matrix {
        self.b.matmul(&self.a).expect("factor shapes validated at construction")
    }

    /// Re-assemble group members that share one `A` into a single layer whose
    /// `B` and bias are the row-wise concatenation of the members'.
    pub fn stack(name: impl Into<String>, members: &[FactoredLayer]) -> Result<FactoredLayer> {
        let first = members.first().ok_or_else(|| LordError::Group("no members to stack".into()))?;
        if members.iter().any(|m| m.a != first.a) {
            return Err(LordError::Group("stacked members must share the same A".into()));
        }
        let b = Matrix::vstack(&members.iter().map(|m| &m.b).collect::<Vec<_>>())?;
        let bias = if members.iter().all(|m| m.bias.is_none()) {
            None
        } else {
            let mut v = Vec::with_capacity(b.rows());
            for m in members {
                match &m.bias {
                    Some(x) => v.extend_from_slice(x),
                    None => v.extend(std::iter::repeat_n(0.0, m.d1())),
                }
            }
            Some(v)
        };
        FactoredLayer::new(name, first.a.clone(), b, bias)
    }
}

/// `B (A x) + b̃` as two sequential products.
pub fn factored_forward(layer: &FactoredLayer, x: &Matrix) -> Result<Matrix> {
    if x.rows() != layer.d2() {
        return Err(LordError::shape(format!(
            "layer `{}` expects {} input rows, got {}",
            layer.name,
            layer.d2(),
            x.rows()
        )));
    }
    let h = layer.a.matmul(x)?;
    let mut y = layer.b.matmul(&h)?;
    if let Some(b) = &layer.bias {
        y.add_row_bias(b)?;
    }
    Ok(y)
}

/// How the factored layer's bias is derived in AFM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    /// `b̃ = b`; the output at `x = 0` is preserved exactly.
    #[default]
    Exact,
    /// `b̃ = Q̂_r Q̂_rᵀ b`, the bias projected onto the retained subspace.
    Projected,
}

/// Which second-order statistic the AFM eigenbasis is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// `E[yyᵀ] − E[y]E[y]ᵀ`.
    #[default]
    Centered,
    /// `E[yyᵀ]`.
    Uncentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AfmOptions {
    pub bias_mode: BiasMode,
    pub centering: Centering,
}

/// Truncated-SVD factorization: `B = U_r diag(S_r)`, `A = V_rᵀ`, bias kept.
pub fn decompose_svd(layer: &DenseLayer, r: usize) -> Result<FactoredLayer> {
    let f = svd_truncate(&layer.w, r)?;
    let mut b = f.u.clone();
    for i in 0..b.rows() {
        for (j, &s) in f.s.iter().enumerate() {
            b.set(i, j, (f.u.get(i, j) as f64 * s) as f32);
        }
    }
    FactoredLayer::new(layer.name.clone(), f.v.transpose(), b, layer.bias.clone())
}

/// Atomic feature mimicking from calibration statistics of the layer output.
pub fn decompose_afm(
    layer: &DenseLayer,
    stats: &OutputStats,
    r: usize,
    opts: AfmOptions,
) -> Result<FactoredLayer> {
    let (d1, d2) = layer.w.shape();
    if stats.dim() != d1 {
        return Err(LordError::shape(format!(
            "layer `{}`: stats dim {} does not match output dim {d1}",
            layer.name,
            stats.dim()
        )));
    }
    let dmin = d1.min(d2);
    if r == 0 || r > dmin {
        return Err(LordError::Rank { rank: r, max: dmin });
    }
    if stats.count() < r as u64 {
        return Err(LordError::CalibrationInsufficient {
            layer: layer.name.clone(),
            reason: format!("{} calibration tokens observed, rank {r} needs at least {r}", stats.count()),
        });
    }

    let cov = match opts.centering {
        Centering::Centered => stats.covariance_f64()?,
        Centering::Uncentered => stats.second_moment_f64()?,
    };
    let eig = sym_eig_f64(&cov, d1)?;
    let lmax = eig.values[0];
    let lmin = *eig.values.last().expect("d1 > 0");
    if lmin < -1e-6 * lmax.max(1.0) {
        return Err(LordError::Numerical(format!(
            "layer `{}`: output covariance is not positive semidefinite \
             (min eigenvalue {lmin:.3e}, max {lmax:.3e})",
            layer.name
        )));
    }

    // B = Q̂_r, A = Q̂_rᵀ W, both assembled in f64 before rounding.
    let q = eig.leading_columns(r);
    let w = layer.w.to_f64();
    let a = dgemm_tn(&q, &w, d1, r, d2);

    let bias = match (&layer.bias, opts.bias_mode) {
        (None, _) => None,
        (Some(b), BiasMode::Exact) => Some(b.clone()),
        (Some(b), BiasMode::Projected) => {
            let b64: Vec<f64> = b.iter().map(|&x| x as f64).collect();
            let coeff = dgemm_tn(&q, &b64, d1, r, 1);
            let proj = dgemm(&q, &coeff, d1, r, 1);
            Some(proj.iter().map(|&x| x as f32).collect())
        }
    };

    FactoredLayer::new(
        layer.name.clone(),
        Matrix::from_f64(r, d2, &a)?,
        Matrix::from_f64(d1, r, &q)?,
        bias,
    )
}

/// Layers consuming the same input, stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGroup {
    names: Vec<String>,
    stacked: Matrix,
    /// `offsets[i]..offsets[i + 1]` are member `i`'s rows; length is members + 1.
    offsets: Vec<usize>,
}

impl LayerGroup {
    pub fn new(names: Vec<String>, stacked: Matrix, offsets: Vec<usize>) -> Result<Self> {
        if names.is_empty() || offsets.len() != names.len() + 1 {
            return Err(LordError::Group(format!(
                "{} member names need {} offsets, got {}",
                names.len(),
                names.len() + 1,
                offsets.len()
            )));
        }
        if offsets[0] != 0
            || *offsets.last().unwrap() != stacked.rows()
            || offsets.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(LordError::Group(format!(
                "offsets {offsets:?} do not partition {} stacked rows",
                stacked.rows()
            )));
        }
        Ok(LayerGroup { names, stacked, offsets })
    }

    /// Stack layers that share an input width. Returns the group and the
    /// members' biases in order.
    pub fn from_layers(layers: &[DenseLayer]) -> Result<(LayerGroup, Vec<Option<Vec<f32>>>)> {
        let first = layers.first().ok_or_else(|| LordError::Group("empty group".into()))?;
        let d2 = first.d2();
        if let Some(bad) = layers.iter().find(|l| l.d2() != d2) {
            return Err(LordError::Group(format!(
                "member `{}` has input dim {} but `{}` has {d2}",
                bad.name,
                bad.d2(),
                first.name
            )));
        }
        let stacked = Matrix::vstack(&layers.iter().map(|l| &l.w).collect::<Vec<_>>())?;
        let mut offsets = vec![0];
        for l in layers {
            offsets.push(offsets.last().unwrap() + l.d1());
        }
        let names = layers.iter().map(|l| l.name.clone()).collect();
        let biases = layers.iter().map(|l| l.bias.clone()).collect();
        Ok((LayerGroup::new(names, stacked, offsets)?, biases))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stacked(&self) -> &Matrix {
        &self.stacked
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self) -> String {
        self.names.join("+")
    }

    pub fn member_rows(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// AFM on a group: one shared `A` (`r × d2`) and a per-member slice of `B`.
///
/// `stats` must describe the stacked output (dimension `Σ d1ᵢ`). Members
/// without a bias stay bias-free.
pub fn decompose_group(
    group: &LayerGroup,
    biases: &[Option<Vec<f32>>],
    stats: &OutputStats,
    r: usize,
    opts: AfmOptions,
) -> Result<Vec<FactoredLayer>> {
    let total = group.stacked.rows();
    if biases.len() != group.len() {
        return Err(LordError::Group(format!(
            "group `{}` has {} members but {} bias entries",
            group.name(),
            group.len(),
            biases.len()
        )));
    }
    if stats.dim() != total {
        return Err(LordError::Group(format!(
            "group `{}`: stats dim {} does not match stacked output dim {total}",
            group.name(),
            stats.dim()
        )));
    }
    for (i, b) in biases.iter().enumerate() {
        if let Some(b) = b {
            if b.len() != group.member_rows(i).len() {
                return Err(LordError::Group(format!(
                    "member `{}`: bias length {} does not match its {} rows",
                    group.names[i],
                    b.len(),
                    group.member_rows(i).len()
                )));
            }
        }
    }

    let stacked_bias = if biases.iter().all(Option::is_none) {
        None
    } else {
        let mut v = Vec::with_capacity(total);
        for (i, b) in biases.iter().enumerate() {
            match b {
                Some(b) => v.extend_from_slice(b),
                None => v.extend(std::iter::repeat_n(0.0, group.member_rows(i).len())),
            }
        }
        Some(v)
    };
    let stacked = DenseLayer::new(group.name(), group.stacked.clone(), stacked_bias)?;
    let whole = decompose_afm(&stacked, stats, r, opts)?;

    (0..group.len())
        .map(|i| {
            let rows = group.member_rows(i);
            let b = whole.b.row_slice(rows.start, rows.end)?;
            let bias = match (&biases[i], &whole.bias) {
                (Some(_), Some(all)) => Some(all[rows].to_vec()),
                _ => None,
            };
            FactoredLayer::new(group.names[i].clone(), whole.a.clone(), b, bias)
        })
        .collect()
}
