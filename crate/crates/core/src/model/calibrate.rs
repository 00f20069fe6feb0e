use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{TokenCorpus, ToyModel};
use crate::error::{LordError, Result};
use crate::linalg::{Matrix, OutputStats};

/// Sequences per calibration shard. Shards are fixed by position in the
/// corpus, never by thread count, so results do not depend on parallelism.
const SHARD_SEQUENCES: usize = 4;

/// Output statistics per captured layer or group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationCapture {
    stats: BTreeMap<String, OutputStats>,
}

impl CalibrationCapture {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty statistics for every target.
    pub fn with_targets(targets: &[(String, usize)]) -> Self {
        CalibrationCapture {
            stats: targets.iter().map(|(n, d)| (n.clone(), OutputStats::new(*d))).collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, stats: OutputStats) {
        self.stats.insert(name.into(), stats);
    }

    pub fn get(&self, name: &str) -> Option<&OutputStats> {
        self.stats.get(name)
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.stats.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &OutputStats)> {
        self.stats.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    /// Token count shared by all targets; `None` if empty or inconsistent.
    pub fn token_count(&self) -> Option<u64> {
        let mut counts = self.stats.values().map(OutputStats::count);
        let first = counts.next()?;
        counts.all(|c| c == first).then_some(first)
    }

    pub fn update(&mut self, name: &str, y: &Matrix) -> Result<()> {
        if let Some(s) = self.stats.get_mut(name) {
            s.update(y)?;
        }
        Ok(())
    }

    /// Target-wise merge; both captures must cover the same targets.
    pub fn merge(&self, other: &CalibrationCapture) -> Result<CalibrationCapture> {
        if !self.stats.keys().eq(other.stats.keys()) {
            return Err(LordError::shape("captures cover different targets"));
        }
        let stats = self
            .stats
            .iter()
            .map(|(k, a)| Ok((k.clone(), a.merge(&other.stats[k])?)))
            .collect::<Result<_>>()?;
        Ok(CalibrationCapture { stats })
    }
}

/// Run the corpus through the model and accumulate per-token output
/// statistics for each target projection. At most `max_tokens` tokens are
/// used when given.
pub fn calibrate(
    model: &ToyModel,
    corpus: &TokenCorpus,
    targets: &[String],
    max_tokens: Option<usize>,
) -> Result<CalibrationCapture> {
    if targets.is_empty() {
        return Err(LordError::Input("no calibration targets given".into()));
    }
    let mut dims = Vec::with_capacity(targets.len());
    for t in targets {
        let p = model.projection(t).ok_or_else(|| LordError::UnknownName(t.clone()))?;
        dims.push((t.clone(), p.linear.d1()));
    }
    if corpus.vocab() > model.arch.vocab {
        return Err(LordError::Input(format!(
            "corpus vocab {} exceeds model vocab {}",
            corpus.vocab(),
            model.arch.vocab
        )));
    }

    let corpus = match max_tokens {
        Some(n) => corpus.take_tokens(n),
        None => corpus.clone(),
    };
    let ctx = model.arch.context;
    let seqs: Vec<&[u32]> = corpus.sequences().iter().flat_map(|s| s.chunks(ctx)).collect();
    if seqs.is_empty() {
        return Err(LordError::Input("calibration corpus is empty".into()));
    }
    let n_tokens: usize = seqs.iter().map(|s| s.len()).sum();
    for (name, d) in &dims {
        if n_tokens < *d {
            log::warn!("calibrating `{name}` (dim {d}) on only {n_tokens} tokens; covariance is rank deficient");
        }
    }

    let shards: Vec<CalibrationCapture> = seqs
        .par_chunks(SHARD_SEQUENCES)
        .map(|chunk| {
            let mut cap = CalibrationCapture::with_targets(&dims);
            for s in chunk {
                let mut hook = |name: &str, y: &Matrix| cap.update(name, y);
                model.forward_with(s, Some(&mut hook))?;
            }
            Ok(cap)
        })
        .collect::<Result<_>>()?;

    let mut it = shards.into_iter();
    let first = it.next().expect("at least one shard");
    it.try_fold(first, |acc, s| acc.merge(&s))
}
