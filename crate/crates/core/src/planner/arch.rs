use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LordError, Result};

/// Role of a linear layer inside a decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    AttnQkv,
    AttnOut,
    MlpUp,
    MlpDown,
    MlpGate,
    Embedding,
    LmHead,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::AttnQkv,
        LayerKind::AttnOut,
        LayerKind::MlpUp,
        LayerKind::MlpDown,
        LayerKind::MlpGate,
        LayerKind::Embedding,
        LayerKind::LmHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::AttnQkv => "attn_qkv",
            LayerKind::AttnOut => "attn_out",
            LayerKind::MlpUp => "mlp_up",
            LayerKind::MlpDown => "mlp_down",
            LayerKind::MlpGate => "mlp_gate",
            LayerKind::Embedding => "embedding",
            LayerKind::LmHead => "lm_head",
        }
    }

    /// Embedding and LM head are never factored.
    pub fn is_decomposable(self) -> bool {
        !matches!(self, LayerKind::Embedding | LayerKind::LmHead)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = LordError;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LordError::UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attention {
    /// Multi-head: separate Q, K, V of width `hidden` each.
    Mha,
    /// Multi-query: one shared K and V head of width `head_dim`.
    Mqa { head_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpKind {
    /// `down(gelu(up(x)))`.
    Gelu,
    /// `down(silu(gate(x)) ⊙ up(x))`.
    Swiglu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub kind: MlpKind,
    pub intermediate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positions {
    /// A trained `context × hidden` table added to the token embedding.
    Learned,
    /// Rotary embeddings on queries and keys; no parameters.
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Weight and bias.
    LayerNorm,
    /// Weight only.
    RmsNorm,
}

/// Architecture of a decoder-only transformer, enough to derive every
/// tensor shape and the exact parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab: usize,
    pub context: usize,
    pub positions: Positions,
    pub attention: Attention,
    pub mlp: Mlp,
    pub norm: NormKind,
    /// Attention and MLP read the same normalized input (one norm per block).
    #[serde(default)]
    pub parallel_residual: bool,
    pub attn_bias: bool,
    pub mlp_bias: bool,
    #[serde(default)]
    pub lm_head_bias: bool,
    pub tied_embeddings: bool,
}

/// One linear mapping per block: either a single layer or a group of layers
/// stacked because they read the same input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    /// Name within a block, e.g. `attn_qkv`.
    pub suffix: &'static str,
    pub kinds: Vec<LayerKind>,
    /// Member names and output widths, in stacking order.
    pub members: Vec<(String, usize)>,
    /// Stacked output width `Σ d1ᵢ`.
    pub d1: usize,
    pub d2: usize,
    pub bias: bool,
}

impl GroupSpec {
    fn new(suffix: &'static str, kinds: Vec<LayerKind>, members: Vec<(&str, usize)>, d2: usize, bias: bool) -> Self {
        let d1 = members.iter().map(|m| m.1).sum();
        GroupSpec {
            suffix,
            kinds,
            members: members.into_iter().map(|(n, d)| (n.to_string(), d)).collect(),
            d1,
            d2,
            bias,
        }
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for (_, d) in &self.members {
            o.push(o.last().unwrap() + d);
        }
        o
    }

    pub fn weight_params(&self) -> u64 {
        (self.d1 * self.d2) as u64
    }

    pub fn params(&self) -> u64 {
        self.weight_params() + if self.bias { self.d1 as u64 } else { 0 }
    }

    pub fn full_name(&self, block: usize) -> String {
        block_name(block, self.suffix)
    }
}

pub fn block_name(block: usize, suffix: &str) -> String {
    format!("h.{block}.{suffix}")
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LordError::Input(format!("architecture `{}`: {msg}", self.name)));
        for (field, v) in [
            ("hidden", self.hidden),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("vocab", self.vocab),
            ("context", self.context),
            ("mlp.intermediate", self.mlp.intermediate),
        ] {
            if v == 0 {
                return bad(format!("{field} must be positive"));
            }
        }
        if self.hidden % self.n_heads != 0 {
            return bad(format!("hidden {} not divisible by n_heads {}", self.hidden, self.n_heads));
        }
        if let Attention::Mqa { head_dim } = self.attention {
            if head_dim * self.n_heads != self.hidden {
                return bad(format!(
                    "mqa head_dim {head_dim} × n_heads {} != hidden {}",
                    self.n_heads, self.hidden
                ));
            }
        }
        if self.positions == Positions::Rotary && self.head_dim() % 2 != 0 {
            return bad(format!("rotary positions need an even head_dim, got {}", self.head_dim()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    /// Width of each of K and V.
    pub fn kv_dim(&self) -> usize {
        match self.attention {
            Attention::Mha => self.hidden,
            Attention::Mqa { head_dim } => head_dim,
        }
    }

    pub fn qkv_dim(&self) -> usize {
        self.hidden + 2 * self.kv_dim()
    }

    fn norm_params(&self) -> u64 {
        match self.norm {
            NormKind::LayerNorm => 2 * self.hidden as u64,
            NormKind::RmsNorm => self.hidden as u64,
        }
    }

    pub fn norms_per_block(&self) -> usize {
        if self.parallel_residual {
            1
        } else {
            2
        }
    }

    /// The linear mappings of one block in forward order, grouped by shared
    /// input: MHA Q/K/V stack to `3d × d`; MQA keeps its fused `(d + 2h) × d`;
    /// SwiGLU stacks gate and up.
    pub fn block_groups(&self) -> Vec<GroupSpec> {
        let d = self.hidden;
        let ff = self.mlp.intermediate;
        let qkv = match self.attention {
            Attention::Mha => GroupSpec::new(
                "attn_qkv",
                vec![LayerKind::AttnQkv],
                vec![("q", d), ("k", d), ("v", d)],
                d,
                self.attn_bias,
            ),
            Attention::Mqa { .. } => GroupSpec::new(
                "attn_qkv",
                vec![LayerKind::AttnQkv],
                vec![("qkv", self.qkv_dim())],
                d,
                self.attn_bias,
            ),
        };
        let out = GroupSpec::new("attn_out", vec![LayerKind::AttnOut], vec![("out", d)], d, self.attn_bias);
        let mlp_in = match self.mlp.kind {
            MlpKind::Gelu => GroupSpec::new("mlp_up", vec![LayerKind::MlpUp], vec![("up", ff)], d, self.mlp_bias),
            MlpKind::Swiglu => GroupSpec::new(
                "mlp_gate_up",
                vec![LayerKind::MlpGate, LayerKind::MlpUp],
                vec![("gate", ff), ("up", ff)],
                d,
                self.mlp_bias,
            ),
        };
        let down = GroupSpec::new("mlp_down", vec![LayerKind::MlpDown], vec![("down", d)], ff, self.mlp_bias);
        vec![qkv, out, mlp_in, down]
    }

    pub fn block_params(&self) -> u64 {
        let linear: u64 = self.block_groups().iter().map(GroupSpec::params).sum();
        linear + self.norms_per_block() as u64 * self.norm_params()
    }

    pub fn embedding_params(&self) -> u64 {
        (self.vocab * self.hidden) as u64
    }

    pub fn position_params(&self) -> u64 {
        match self.positions {
            Positions::Learned => (self.context * self.hidden) as u64,
            Positions::Rotary => 0,
        }
    }

    pub fn lm_head_params(&self) -> u64 {
        let w = if self.tied_embeddings { 0 } else { (self.vocab * self.hidden) as u64 };
        w + if self.lm_head_bias { self.vocab as u64 } else { 0 }
    }

    /// Exact parameter count of the dense model.
    pub fn param_count(&self) -> u64 {
        self.embedding_params()
            + self.position_params()
            + self.n_layers as u64 * self.block_params()
            + self.norm_params()
            + self.lm_head_params()
    }

    /// Shipped descriptors: `starcoder-16b`, `codegen-16b`, `toy-64`,
    /// `toy-128`, `toy-swiglu`.
    pub fn builtin(name: &str) -> Option<ArchDescriptor> {
        let src = match name {
            "starcoder-16b" => include_str!("../../archs/starcoder-16b.json"),
            "codegen-16b" => include_str!("../../archs/codegen-16b.json"),
            "toy-64" => include_str!("../../archs/toy-64.json"),
            "toy-128" => include_str!("../../archs/toy-128.json"),
            "toy-swiglu" => include_str!("../../archs/toy-swiglu.json"),
            _ => return None,
        };
        Some(serde_json::from_str(src).expect("shipped descriptor parses"))
    }

    pub const BUILTIN_NAMES: [&'static str; 5] = ["starcoder-16b", "codegen-16b", "toy-64", "toy-128", "toy-swiglu"];
}
