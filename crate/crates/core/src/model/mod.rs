//! A forward-only decoder-only transformer at desk scale.
//!
//! The model hosts dense or factored linear layers interchangeably, can
//! report every layer output to a calibration hook, and is evaluated by
//! next-token perplexity. Weights come from a seeded synthetic
//! initialization ([`synth_model`]); the spectral-decay option gives weight
//! matrices power-law singular values so that layer outputs are
//! approximately low rank, as they are in trained models.

mod apply;
mod calibrate;
mod corpus;
mod ops;
mod perplexity;
mod sample;
mod synth;

use std::collections::BTreeMap;

pub use apply::apply_plan;
pub use calibrate::{calibrate, CalibrationCapture};
pub use corpus::{synth_corpus, CorpusConfig, TokenCorpus};
pub use ops::Norm;
pub use perplexity::{evaluate_nll, perplexity, LanguageModel, NllSummary};
pub use sample::sample_corpus;
pub use synth::{synth_model, Init};

use crate::decompose::{DenseLayer, FactoredLayer};
use crate::error::{LordError, Result};
use crate::linalg::Matrix;
use crate::planner::{ArchDescriptor, Attention, GroupSpec, MlpKind, NormKind, Positions};

/// A linear layer slot: dense or factored.
#[derive(Debug, Clone, PartialEq)]
pub enum Linear {
    Dense(DenseLayer),
    Factored(FactoredLayer),
}

impl Linear {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Linear::Dense(l) => l.forward(x),
            Linear::Factored(l) => l.forward(x),
        }
    }

    pub fn d1(&self) -> usize {
        match self {
            Linear::Dense(l) => l.d1(),
            Linear::Factored(l) => l.d1(),
        }
    }

    pub fn d2(&self) -> usize {
        match self {
            Linear::Dense(l) => l.d2(),
            Linear::Factored(l) => l.d2(),
        }
    }

    pub fn params(&self) -> u64 {
        match self {
            Linear::Dense(l) => l.params(),
            Linear::Factored(l) => l.params(),
        }
    }

    /// Multiply-adds per input column.
    pub fn flops_per_token(&self) -> u64 {
        match self {
            Linear::Dense(l) => (l.d1() * l.d2()) as u64,
            Linear::Factored(l) => l.flops(1),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, Linear::Factored(_))
    }

    pub fn bias(&self) -> Option<&[f32]> {
        match self {
            Linear::Dense(l) => l.bias.as_deref(),
            Linear::Factored(l) => l.bias.as_deref(),
        }
    }
}

/// A named linear mapping of a block together with its grouping metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub name: String,
    pub spec: GroupSpec,
    pub linear: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: Norm,
    /// Absent for parallel-residual blocks.
    pub norm2: Option<Norm>,
    pub qkv: Projection,
    pub out: Projection,
    /// `mlp_up`, or stacked `gate; up` for SwiGLU.
    pub mlp_in: Projection,
    pub down: Projection,
}

impl Block {
    pub fn projections(&self) -> [&Projection; 4] {
        [&self.qkv, &self.out, &self.mlp_in, &self.down]
    }

    pub fn projections_mut(&mut self) -> [&mut Projection; 4] {
        [&mut self.qkv, &mut self.out, &mut self.mlp_in, &mut self.down]
    }
}

/// Borrowed view of one stored tensor, in container order.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub role: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f32],
    pub factored: bool,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub arch: ArchDescriptor,
    /// `vocab × hidden`, one row per token.
    pub wte: Matrix,
    /// `context × hidden` for learned positions.
    pub wpe: Option<Matrix>,
    pub blocks: Vec<Block>,
    pub norm_f: Norm,
    /// `vocab × hidden`; `None` when tied to `wte`.
    pub lm_head: Option<Matrix>,
    pub lm_head_bias: Option<Vec<f32>>,
}

/// Observer of projection outputs during a forward pass.
pub type CaptureHook<'a> = dyn FnMut(&str, &Matrix) -> Result<()> + 'a;

impl ToyModel {
    pub fn param_count(&self) -> u64 {
        self.tensors().iter().map(|t| t.data.len() as u64).sum()
    }

    /// Per-token multiply-adds of all linear layers including the LM head.
    pub fn linear_flops_per_token(&self) -> u64 {
        let blocks: u64 = self
            .blocks
            .iter()
            .flat_map(|b| b.projections())
            .map(|p| p.linear.flops_per_token())
            .sum();
        blocks + (self.arch.vocab * self.arch.hidden) as u64
    }

    pub fn projections(&self) -> impl Iterator<Item = &Projection> {
        self.blocks.iter().flat_map(|b| b.projections())
    }

    pub fn projection(&self, name: &str) -> Option<&Projection> {
        self.projections().find(|p| p.name == name)
    }

    pub fn projection_mut(&mut self, name: &str) -> Option<&mut Projection> {
        self.blocks.iter_mut().flat_map(|b| b.projections_mut()).find(|p| p.name == name)
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<Matrix> {
        self.forward_with(tokens, None)
    }

    /// Forward pass returning `vocab × T` logits; every projection output is
    /// passed to `hook` when one is given.
    pub fn forward_with(&self, tokens: &[u32], mut hook: Option<&mut CaptureHook<'_>>) -> Result<Matrix> {
        let arch = &self.arch;
        let (d, t) = (arch.hidden, tokens.len());
        if t == 0 {
            return Err(LordError::Input("cannot run a forward pass on zero tokens".into()));
        }
        if t > arch.context {
            return Err(LordError::Input(format!("{t} tokens exceed the context of {}", arch.context)));
        }
        if let Some(&bad) = tokens.iter().find(|&&x| x as usize >= arch.vocab) {
            return Err(LordError::Input(format!("token id {bad} out of range for vocab {}", arch.vocab)));
        }

        let mut x = Matrix::from_fn(d, t, |i, j| self.wte.get(tokens[j] as usize, i));
        if let Some(wpe) = &self.wpe {
            for i in 0..d {
                for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                    *v += wpe.get(j, i);
                }
            }
        }

        let mut emit = |p: &Projection, input: &Matrix| -> Result<Matrix> {
            let y = p.linear.forward(input)?;
            if let Some(h) = hook.as_deref_mut() {
                h(&p.name, &y)?;
            }
            Ok(y)
        };

        for block in &self.blocks {
            let a = block.norm1.apply(&x);
            let attn = self.attention(block, &a, &mut emit)?;
            match &block.norm2 {
                Some(norm2) => {
                    x.add_assign(&attn)?;
                    let m = norm2.apply(&x);
                    let mlp = self.mlp(block, &m, &mut emit)?;
                    x.add_assign(&mlp)?;
                }
                None => {
                    let mlp = self.mlp(block, &a, &mut emit)?;
                    x.add_assign(&attn)?;
                    x.add_assign(&mlp)?;
                }
            }
        }

        let h = self.norm_f.apply(&x);
        let head = self.lm_head.as_ref().unwrap_or(&self.wte);
        let mut logits = head.matmul(&h)?;
        if let Some(b) = &self.lm_head_bias {
            logits.add_row_bias(b)?;
        }
        Ok(logits)
    }

    fn attention(
        &self,
        block: &Block,
        input: &Matrix,
        emit: &mut impl FnMut(&Projection, &Matrix) -> Result<Matrix>,
    ) -> Result<Matrix> {
        let arch = &self.arch;
        let (d, t) = (arch.hidden, input.cols());
        let hd = arch.head_dim();
        let kv = arch.kv_dim();
        let qkv = emit(&block.qkv, input)?;
        let mut merged = Matrix::zeros(d, t);
        for h in 0..arch.n_heads {
            let kv_head = match arch.attention {
                Attention::Mha => h,
                Attention::Mqa { .. } => 0,
            };
            let mut q = qkv.row_slice(h * hd, (h + 1) * hd)?;
            let mut k = qkv.row_slice(d + kv_head * hd, d + (kv_head + 1) * hd)?;
            let v = qkv.row_slice(d + kv + kv_head * hd, d + kv + (kv_head + 1) * hd)?;
            if arch.positions == Positions::Rotary {
                ops::apply_rotary(&mut q, 0);
                ops::apply_rotary(&mut k, 0);
            }
            let out = ops::causal_attention(&q, &k, &v);
            for i in 0..hd {
                merged.row_mut(h * hd + i).copy_from_slice(out.row(i));
            }
        }
        emit(&block.out, &merged)
    }

    fn mlp(
        &self,
        block: &Block,
        input: &Matrix,
        emit: &mut impl FnMut(&Projection, &Matrix) -> Result<Matrix>,
    ) -> Result<Matrix> {
        let ff = self.arch.mlp.intermediate;
        let hidden = emit(&block.mlp_in, input)?;
        let act = match self.arch.mlp.kind {
            MlpKind::Gelu => {
                let mut h = hidden;
                h.as_mut_slice().iter_mut().for_each(|v| *v = ops::gelu(*v));
                h
            }
            MlpKind::Swiglu => {
                let t = hidden.cols();
                let mut act = Matrix::zeros(ff, t);
                for i in 0..ff {
                    let gate = hidden.row(i);
                    let up = hidden.row(ff + i);
                    for (j, a) in act.row_mut(i).iter_mut().enumerate() {
                        *a = ops::silu(gate[j]) * up[j];
                    }
                }
                act
            }
        };
        emit(&block.down, &act)
    }

    /// Every stored tensor in a fixed order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        fn mat<'a>(name: String, role: &'static str, m: &'a Matrix, group: Option<String>, factored: bool) -> TensorView<'a> {
            TensorView { name, role, shape: vec![m.rows(), m.cols()], data: m.as_slice(), factored, group }
        }
        out.push(mat("wte".into(), "embedding", &self.wte, None, false));
        if let Some(wpe) = &self.wpe {
            out.push(mat("wpe".into(), "position", wpe, None, false));
        }
        fn norm<'a>(out: &mut Vec<TensorView<'a>>, prefix: &str, n: &'a Norm) {
            out.push(TensorView {
                name: format!("{prefix}.weight"),
                role: "norm_weight",
                shape: vec![n.weight.len()],
                data: &n.weight,
                factored: false,
                group: None,
            });
            if let Some(b) = &n.bias {
                out.push(TensorView {
                    name: format!("{prefix}.bias"),
                    role: "norm_bias",
                    shape: vec![b.len()],
                    data: b,
                    factored: false,
                    group: None,
                });
            }
        }
        for (i, block) in self.blocks.iter().enumerate() {
            norm(&mut out, &format!("h.{i}.norm1"), &block.norm1);
            if let Some(n2) = &block.norm2 {
                norm(&mut out, &format!("h.{i}.norm2"), n2);
            }
            for p in block.projections() {
                let g = Some(p.name.clone());
                match &p.linear {
                    Linear::Dense(l) => out.push(mat(format!("{}.weight", p.name), "weight", &l.w, g.clone(), false)),
                    Linear::Factored(l) => {
                        out.push(mat(format!("{}.a", p.name), "factor_a", &l.a, g.clone(), true));
                        out.push(mat(format!("{}.b", p.name), "factor_b", &l.b, g.clone(), true));
                    }
                }
                if let Some(b) = p.linear.bias() {
                    out.push(TensorView {
                        name: format!("{}.bias", p.name),
                        role: "bias",
                        shape: vec![b.len()],
                        data: b,
                        factored: p.linear.is_factored(),
                        group: g,
                    });
                }
            }
        }
        norm(&mut out, "norm_f", &self.norm_f);
        if let Some(head) = &self.lm_head {
            out.push(mat("lm_head.weight".into(), "lm_head", head, None, false));
        }
        if let Some(b) = &self.lm_head_bias {
            out.push(TensorView {
                name: "lm_head.bias".into(),
                role: "bias",
                shape: vec![b.len()],
                data: b,
                factored: false,
                group: None,
            });
        }
        out
    }

    /// Rebuild a model from named tensors, validating every shape against
    /// `arch`. Projections stored as `.a`/`.b` pairs become factored layers.
    pub fn from_tensors(arch: ArchDescriptor, tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<ToyModel> {
        arch.validate()?;
        let (d, v) = (arch.hidden, arch.vocab);
        let mut bag = TensorBag(tensors);

        let wte = bag.matrix("wte", v, d)?;
        let wpe = match arch.positions {
            Positions::Learned => Some(bag.matrix("wpe", arch.context, d)?),
            Positions::Rotary => None,
        };

        let mut blocks = Vec::with_capacity(arch.n_layers);
        for i in 0..arch.n_layers {
            let norm1 = bag.norm(&arch, &format!("h.{i}.norm1"))?;
            let norm2 = if arch.parallel_residual {
                None
            } else {
                Some(bag.norm(&arch, &format!("h.{i}.norm2"))?)
            };
            let mut projs = Vec::with_capacity(4);
            for spec in arch.block_groups() {
                let name = spec.full_name(i);
                let bias = if spec.bias { Some(bag.take(&format!("{name}.bias"), &[spec.d1])?) } else { None };
                let weight = format!("{name}.weight");
                let linear = if bag.contains(&weight) {
                    let w = bag.matrix(&weight, spec.d1, spec.d2)?;
                    Linear::Dense(DenseLayer::new(name.clone(), w, bias)?)
                } else {
                    let (a_shape, a) = bag.take_any(&format!("{name}.a"))?;
                    let (b_shape, b) = bag.take_any(&format!("{name}.b"))?;
                    let r = a_shape.first().copied().unwrap_or(0);
                    if a_shape != [r, spec.d2] || b_shape != [spec.d1, r] {
                        return Err(LordError::shape(format!(
                            "factors of `{name}` have shapes {a_shape:?} and {b_shape:?}, \
                             expected [r, {}] and [{}, r]",
                            spec.d2, spec.d1
                        )));
                    }
                    Linear::Factored(FactoredLayer::new(
                        name.clone(),
                        Matrix::new(r, spec.d2, a)?,
                        Matrix::new(spec.d1, r, b)?,
                        bias,
                    )?)
                };
                projs.push(Projection { name, spec, linear });
            }
            let [qkv, out, mlp_in, down]: [Projection; 4] =
                projs.try_into().map_err(|_| LordError::Format("block must have four projections".into()))?;
            blocks.push(Block { norm1, norm2, qkv, out, mlp_in, down });
        }
        let norm_f = bag.norm(&arch, "norm_f")?;
        let lm_head = if arch.tied_embeddings { None } else { Some(bag.matrix("lm_head.weight", v, d)?) };
        let lm_head_bias = if arch.lm_head_bias { Some(bag.take("lm_head.bias", &[v])?) } else { None };

        if let Some(extra) = bag.0.keys().next() {
            return Err(LordError::Format(format!("unexpected tensor `{extra}`")));
        }
        Ok(ToyModel { arch, wte, wpe, blocks, norm_f, lm_head, lm_head_bias })
    }
}

struct TensorBag(BTreeMap<String, (Vec<usize>, Vec<f32>)>);

impl TensorBag {
    fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    fn take_any(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        self.0.remove(name).ok_or_else(|| LordError::Format(format!("missing tensor `{name}`")))
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let (s, data) = self.take_any(name)?;
        if s != shape {
            return Err(LordError::shape(format!("tensor `{name}` has shape {s:?}, expected {shape:?}")));
        }
        Ok(data)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::new(rows, cols, self.take(name, &[rows, cols])?)
    }

    fn norm(&mut self, arch: &ArchDescriptor, prefix: &str) -> Result<Norm> {
        let weight = self.take(&format!("{prefix}.weight"), &[arch.hidden])?;
        let bias = match arch.norm {
            NormKind::LayerNorm => Some(self.take(&format!("{prefix}.bias"), &[arch.hidden])?),
            NormKind::RmsNorm => None,
        };
        Ok(Norm { kind: arch.norm, weight, bias })
    }
}
