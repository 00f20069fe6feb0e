//! Deciding what to factor and at which rank.
//!
//! Factoring a `d1 × d2` weight at rank `r` replaces `d1·d2` parameters with
//! `r·(d1 + d2)`. With aspect ratio `α = d_min / d_max` and percent rank
//! reduction `%Δr = 100·(d_min − r)/d_min`, the percent change in parameters
//! is `100α − (1 + α)·%Δr`. It is zero at the *parity rank*
//! `d1·d2 / (d1 + d2)`, i.e. at a rank reduction of `100α / (1 + α)` percent:
//! 50% for a square matrix, 20% for a 4× MLP projection. Above the parity
//! rank a factorization makes the layer bigger.
//!
//! The planner groups layers that share an input (lowering `α`), skips
//! near-square layers by default, rounds ranks to hardware-friendly
//! multiples, and accounts for every parameter of the model with integers.

mod arch;

use serde::{Deserialize, Serialize};

pub use arch::{
    block_name, ArchDescriptor, Attention, GroupSpec, LayerKind, Mlp, MlpKind, NormKind, Positions,
};

use crate::error::{LordError, Result};

/// `d_min / d_max`, in `(0, 1]`.
pub fn aspect_ratio(d1: usize, d2: usize) -> f64 {
    assert!(d1 > 0 && d2 > 0, "dimensions must be positive");
    d1.min(d2) as f64 / d1.max(d2) as f64
}

/// `100·(d_min − r)/d_min`.
pub fn pct_rank_reduction(d_min: usize, r: usize) -> f64 {
    100.0 * (d_min as f64 - r as f64) / d_min as f64
}

/// Percent change in parameters from factoring `d1 × d2` at rank `r`,
/// computed from exact integer counts. Positive means growth.
pub fn percent_param_change(d1: usize, d2: usize, r: usize) -> f64 {
    let before = d1 as i128 * d2 as i128;
    let after = r as i128 * (d1 as i128 + d2 as i128);
    100.0 * (after - before) as f64 / before as f64
}

/// The same quantity written in terms of aspect ratio and rank reduction:
/// `100α − (1 + α)·%Δr`.
pub fn percent_param_change_from_ratio(alpha: f64, pct_rank_reduction: f64) -> f64 {
    100.0 * alpha - (1.0 + alpha) * pct_rank_reduction
}

/// Largest rank whose factorization does not grow the layer:
/// `⌊d1·d2 / (d1 + d2)⌋`.
pub fn parity_rank(d1: usize, d2: usize) -> usize {
    ((d1 as u128 * d2 as u128) / (d1 as u128 + d2 as u128)) as usize
}

/// Percent rank reduction at which parity is reached: `100α / (1 + α)`.
pub fn parity_reduction(alpha: f64) -> f64 {
    100.0 * alpha / (1.0 + alpha)
}

/// Round `r_target` to the nearest multiple of `multiple` (ties round up),
/// clamped to `[multiple, d_min]`.
pub fn round_rank(r_target: f64, multiple: usize, d_min: usize) -> Result<usize> {
    if multiple == 0 {
        return Err(LordError::Policy("rank multiple must be at least 1".into()));
    }
    if d_min < multiple {
        return Err(LordError::Policy(format!(
            "rank multiple {multiple} exceeds the layer's smaller dimension {d_min}"
        )));
    }
    if !r_target.is_finite() {
        return Err(LordError::Policy(format!("rank target {r_target} is not finite")));
    }
    let m = multiple as f64;
    let rounded = ((r_target / m + 0.5).floor() * m).max(0.0) as usize;
    Ok(rounded.clamp(multiple, d_min))
}

/// Per-block grouping of the linear layers of `arch`.
pub fn group_layers(arch: &ArchDescriptor) -> Vec<GroupSpec> {
    arch.block_groups()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svd,
    Afm,
}

impl std::str::FromStr for Method {
    type Err = LordError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(Method::Svd),
            "afm" => Ok(Method::Afm),
            other => Err(LordError::Input(format!("unknown method `{other}` (expected afm or svd)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankSpec {
    /// Use this rank for every target, as given.
    Fixed(usize),
    /// Reduce rank by this percentage of `d_min`, then round.
    Reduction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub targets: Vec<LayerKind>,
    pub rank: RankSpec,
    /// Rounding multiple for [`RankSpec::Reduction`].
    pub multiple: usize,
    pub method: Method,
    /// Groups with `α` above this are skipped; `None` disables the rule.
    pub skip_alpha_above: Option<f64>,
    /// Reject the plan if any entry grows by more than this percentage.
    pub max_param_growth_pct: Option<f64>,
}

impl Policy {
    pub fn new(targets: Vec<LayerKind>, rank: RankSpec) -> Self {
        Policy {
            targets,
            rank,
            multiple: 128,
            method: Method::Afm,
            skip_alpha_above: Some(0.9),
            max_param_growth_pct: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub target: String,
    pub d1: usize,
    pub d2: usize,
    pub alpha: f64,
    pub rank: usize,
    pub pct_rank_reduction: f64,
    pub pct_param_change: f64,
    pub parity_rank: usize,
    /// Weight parameters of the dense layer (`d1·d2`); biases are unchanged
    /// by factoring and counted only in the plan totals.
    pub params_before: u64,
    /// `r·(d1 + d2)`.
    pub params_after: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl PlanEntry {
    pub fn new(target: String, d1: usize, d2: usize, rank: usize) -> Self {
        let d_min = d1.min(d2);
        let parity = parity_rank(d1, d2);
        let warning = (rank >= parity).then(|| {
            format!(
                "rank {rank} is at or above the parity rank {parity}; \
                 factoring changes this layer's parameters by {:+.2}%",
                percent_param_change(d1, d2, rank)
            )
        });
        PlanEntry {
            target,
            d1,
            d2,
            alpha: aspect_ratio(d1, d2),
            rank,
            pct_rank_reduction: pct_rank_reduction(d_min, rank),
            pct_param_change: percent_param_change(d1, d2, rank),
            parity_rank: parity,
            params_before: (d1 * d2) as u64,
            params_after: (rank * (d1 + d2)) as u64,
            warning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub before: u64,
    pub after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub arch: ArchDescriptor,
    pub method: Method,
    pub entries: Vec<PlanEntry>,
    pub totals: Totals,
}

impl CompressionPlan {
    /// A plan that changes nothing.
    pub fn empty(arch: ArchDescriptor, method: Method) -> Self {
        let n = arch.param_count();
        CompressionPlan { arch, method, entries: Vec::new(), totals: Totals { before: n, after: n } }
    }

    /// Build from explicit entries, computing totals.
    pub fn from_entries(arch: ArchDescriptor, method: Method, entries: Vec<PlanEntry>) -> Self {
        let before = arch.param_count();
        let removed: i128 = entries.iter().map(|e| e.params_before as i128 - e.params_after as i128).sum();
        let after = (before as i128 - removed) as u64;
        CompressionPlan { arch, method, entries, totals: Totals { before, after } }
    }

    pub fn entry(&self, target: &str) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.target == target)
    }

    pub fn pct_param_change(&self) -> f64 {
        100.0 * (self.totals.after as f64 - self.totals.before as f64) / self.totals.before as f64
    }
}

/// One entry per targeted group per block, with exact integer totals.
pub fn build_plan(arch: &ArchDescriptor, policy: &Policy) -> Result<CompressionPlan> {
    arch.validate()?;
    if policy.targets.is_empty() {
        return Err(LordError::Policy("no target layer kinds given".into()));
    }
    if let Some(k) = policy.targets.iter().find(|k| !k.is_decomposable()) {
        return Err(LordError::Policy(format!("`{k}` layers are never decomposed")));
    }

    let mut selected = Vec::new();
    for g in arch.block_groups() {
        if !g.kinds.iter().any(|k| policy.targets.contains(k)) {
            continue;
        }
        let alpha = aspect_ratio(g.d1, g.d2);
        if let Some(limit) = policy.skip_alpha_above {
            if alpha > limit {
                log::warn!(
                    "skipping `{}` ({}x{}, alpha {alpha:.2} > {limit}): near-square layers only \
                     shrink after a large rank reduction",
                    g.suffix,
                    g.d1,
                    g.d2
                );
                continue;
            }
        }
        selected.push(g);
    }
    if selected.is_empty() {
        return Err(LordError::Policy(format!(
            "every targeted layer of `{}` was excluded by the aspect-ratio skip rule",
            arch.name
        )));
    }

    let mut per_block = Vec::with_capacity(selected.len());
    for g in &selected {
        let d_min = g.d1.min(g.d2);
        let rank = match policy.rank {
            RankSpec::Fixed(r) => {
                if r == 0 || r > d_min {
                    return Err(LordError::Policy(format!(
                        "rank {r} is outside 1..={d_min} for `{}` ({}x{})",
                        g.suffix, g.d1, g.d2
                    )));
                }
                r
            }
            RankSpec::Reduction(pct) => {
                if !(0.0..100.0).contains(&pct) {
                    return Err(LordError::Policy(format!("rank reduction {pct}% outside [0, 100)")));
                }
                let r = round_rank(d_min as f64 * (1.0 - pct / 100.0), policy.multiple, d_min)?;
                if r > parity_rank(g.d1, g.d2) {
                    log::warn!(
                        "`{}`: rounded rank {r} exceeds the parity rank {}",
                        g.suffix,
                        parity_rank(g.d1, g.d2)
                    );
                }
                r
            }
        };
        if let Some(limit) = policy.max_param_growth_pct {
            let change = percent_param_change(g.d1, g.d2, rank);
            if change > limit {
                return Err(LordError::Policy(format!(
                    "`{}` at rank {rank} changes parameters by {change:+.2}%, above the allowed {limit:+.2}%",
                    g.suffix
                )));
            }
        }
        per_block.push((g, rank));
    }

    let mut entries = Vec::with_capacity(arch.n_layers * per_block.len());
    for block in 0..arch.n_layers {
        for (g, rank) in &per_block {
            entries.push(PlanEntry::new(g.full_name(block), g.d1, g.d2, *rank));
        }
    }
    Ok(CompressionPlan::from_entries(arch.clone(), policy.method, entries))
}
