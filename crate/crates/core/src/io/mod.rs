//! File formats: model and calibration-stats containers, plan JSON and token
//! corpora. All binary data is little-endian.
//!
//! | file | magic | contents |
//! |------|-------|----------|
//! | model | `LORDMDL1` | architecture plus `f32` tensors |
//! | stats | `LORDSTA1` | per target: `u64` count, `f64` mean and `Σ y yᵀ` |
//! | plan | JSON | [`CompressionPlan`] |
//! | corpus | `LORDTOK1` | `u32` vocab, `u32` sequence count, then per sequence `u32` length and ids |

pub mod container;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use self::container::{f32_bytes, f64_bytes, ContainerHeader, Dtype, Pending, TensorEntry};
use crate::error::{LordError, Result};
use crate::linalg::OutputStats;
use crate::model::{CalibrationCapture, TokenCorpus, ToyModel};
use crate::planner::{ArchDescriptor, CompressionPlan};

pub const MODEL_MAGIC: &[u8; 8] = b"LORDMDL1";
pub const STATS_MAGIC: &[u8; 8] = b"LORDSTA1";
pub const CORPUS_MAGIC: &[u8; 8] = b"LORDTOK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub arch: ArchDescriptor,
    pub tensors: Vec<TensorEntry>,
}

impl ContainerHeader for ModelHeader {
    fn format_version(&self) -> u32 {
        self.format_version
    }
    fn tensors(&self) -> &[TensorEntry] {
        &self.tensors
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsHeader {
    pub format_version: u32,
    /// Captured targets and their output dims.
    pub targets: Vec<(String, usize)>,
    pub tensors: Vec<TensorEntry>,
}

impl ContainerHeader for StatsHeader {
    fn format_version(&self) -> u32 {
        self.format_version
    }
    fn tensors(&self) -> &[TensorEntry] {
        &self.tensors
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(LordError::Io)
}

pub fn model_to_bytes(model: &ToyModel) -> Vec<u8> {
    let pending = model
        .tensors()
        .into_iter()
        .map(|t| {
            let mut p = Pending::new(t.name, Dtype::F32, t.shape, t.role, f32_bytes(t.data));
            p.entry.factored = t.factored;
            p.entry.group = t.group;
            p
        })
        .collect();
    container::write(MODEL_MAGIC, pending, |tensors| ModelHeader {
        format_version: FORMAT_VERSION,
        arch: model.arch.clone(),
        tensors,
    })
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ToyModel> {
    let parsed = container::read::<ModelHeader>(bytes, MODEL_MAGIC, FORMAT_VERSION)?;
    let mut tensors = BTreeMap::new();
    for e in &parsed.header.tensors {
        let data = parsed.f32s(e)?;
        if tensors.insert(e.name.clone(), (e.shape.clone(), data)).is_some() {
            return Err(LordError::Corruption { tensor: e.name.clone(), reason: "duplicate tensor name".into() });
        }
    }
    ToyModel::from_tensors(parsed.header.arch.clone(), tensors)
}

pub fn save_model(model: &ToyModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ToyModel> {
    model_from_bytes(&read_file(path.as_ref())?)
}

/// Only the header of a model file, without reading tensors into a model.
pub fn read_model_header(path: impl AsRef<Path>) -> Result<ModelHeader> {
    let bytes = read_file(path.as_ref())?;
    Ok(container::read::<ModelHeader>(&bytes, MODEL_MAGIC, FORMAT_VERSION)?.header)
}

pub fn stats_to_bytes(capture: &CalibrationCapture) -> Vec<u8> {
    let mut pending = Vec::new();
    let mut targets = Vec::new();
    for (name, s) in capture.iter() {
        let d = s.dim();
        targets.push((name.to_string(), d));
        pending.push(Pending::new(
            format!("{name}.count"),
            Dtype::U64,
            vec![1],
            "count",
            s.count().to_le_bytes().to_vec(),
        ));
        pending.push(Pending::new(format!("{name}.mean"), Dtype::F64, vec![d], "mean", f64_bytes(s.mean())));
        pending.push(Pending::new(
            format!("{name}.moment2"),
            Dtype::F64,
            vec![d, d],
            "moment2",
            f64_bytes(s.moment2()),
        ));
    }
    container::write(STATS_MAGIC, pending, |tensors| StatsHeader {
        format_version: FORMAT_VERSION,
        targets,
        tensors,
    })
}

pub fn stats_from_bytes(bytes: &[u8]) -> Result<CalibrationCapture> {
    let parsed = container::read::<StatsHeader>(bytes, STATS_MAGIC, FORMAT_VERSION)?;
    let by_name: BTreeMap<&str, &TensorEntry> =
        parsed.header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    let find = |name: String, shape: &[usize]| -> Result<&TensorEntry> {
        let e = by_name.get(name.as_str()).ok_or_else(|| LordError::Format(format!("missing tensor `{name}`")))?;
        if e.shape != shape {
            return Err(LordError::Corruption {
                tensor: name,
                reason: format!("shape {:?}, expected {shape:?}", e.shape),
            });
        }
        Ok(e)
    };
    let mut capture = CalibrationCapture::new();
    for (name, d) in &parsed.header.targets {
        let d = *d;
        if d == 0 {
            return Err(LordError::Format(format!("target `{name}` has dim 0")));
        }
        let count = parsed.u64s(find(format!("{name}.count"), &[1])?)?[0];
        let mean = parsed.f64s(find(format!("{name}.mean"), &[d])?)?;
        let moment2 = parsed.f64s(find(format!("{name}.moment2"), &[d, d])?)?;
        capture.insert(name.clone(), OutputStats::from_parts(d, count, mean, moment2)?);
    }
    if parsed.header.tensors.len() != 3 * parsed.header.targets.len() {
        return Err(LordError::Format("stats file has tensors for undeclared targets".into()));
    }
    Ok(capture)
}

pub fn save_stats(capture: &CalibrationCapture, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, stats_to_bytes(capture))?;
    Ok(())
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<CalibrationCapture> {
    stats_from_bytes(&read_file(path.as_ref())?)
}

/// Every captured target must exist in `model` with a matching output dim.
pub fn check_stats(capture: &CalibrationCapture, model: &ToyModel) -> Result<()> {
    for (name, s) in capture.iter() {
        let p = model.projection(name).ok_or_else(|| LordError::UnknownName(name.to_string()))?;
        if p.linear.d1() != s.dim() {
            return Err(LordError::shape(format!(
                "statistics for `{name}` have dim {}, but the model's `{name}` outputs {}",
                s.dim(),
                p.linear.d1()
            )));
        }
    }
    Ok(())
}

pub fn plan_to_json(plan: &CompressionPlan) -> String {
    serde_json::to_string_pretty(plan).expect("plan serializes")
}

/// Parse a plan and check that its totals agree with its entries.
pub fn plan_from_json(text: &str) -> Result<CompressionPlan> {
    let plan: CompressionPlan =
        serde_json::from_str(text).map_err(|e| LordError::Format(format!("invalid plan JSON: {e}")))?;
    plan.arch.validate()?;
    let expected = CompressionPlan::from_entries(plan.arch.clone(), plan.method, plan.entries.clone());
    if expected.totals != plan.totals {
        return Err(LordError::Format(format!(
            "plan totals {:?} do not match its entries ({:?})",
            plan.totals, expected.totals
        )));
    }
    Ok(plan)
}

pub fn save_plan(plan: &CompressionPlan, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, plan_to_json(plan) + "\n")?;
    Ok(())
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<CompressionPlan> {
    let bytes = read_file(path.as_ref())?;
    let text = std::str::from_utf8(&bytes).map_err(|e| LordError::Format(format!("plan is not UTF-8: {e}")))?;
    plan_from_json(text)
}

pub fn corpus_to_bytes(corpus: &TokenCorpus) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * (corpus.len() + corpus.total_tokens()));
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&(corpus.vocab() as u32).to_le_bytes());
    out.extend_from_slice(&(corpus.len() as u32).to_le_bytes());
    for s in corpus.sequences() {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for t in s {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    out
}

pub fn corpus_from_bytes(bytes: &[u8]) -> Result<TokenCorpus> {
    if bytes.len() < 8 || &bytes[..8] != CORPUS_MAGIC {
        return Err(LordError::Format("bad magic: expected \"LORDTOK1\"".into()));
    }
    let mut pos = 8;
    let mut next = |what: &dyn Fn() -> String| -> Result<u32> {
        let b = bytes.get(pos..pos + 4).ok_or_else(|| LordError::Corruption {
            tensor: what(),
            reason: "file truncated".into(),
        })?;
        pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let vocab = next(&|| "header".into())? as usize;
    let n = next(&|| "header".into())? as usize;
    let mut sequences = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let label = || format!("sequence {i}");
        let len = next(&label)? as usize;
        let mut s = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            s.push(next(&label)?);
        }
        sequences.push(s);
    }
    if pos != bytes.len() {
        return Err(LordError::Format(format!("{} trailing bytes after the last sequence", bytes.len() - pos)));
    }
    TokenCorpus::new(vocab, sequences).map_err(|e| LordError::Format(e.to_string()))
}

pub fn save_corpus(corpus: &TokenCorpus, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, corpus_to_bytes(corpus))?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<TokenCorpus> {
    corpus_from_bytes(&read_file(path.as_ref())?)
}
