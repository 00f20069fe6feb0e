use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{LordError, Result};

/// Token sequences over a vocabulary of size `vocab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenCorpus {
    vocab: usize,
    sequences: Vec<Vec<u32>>,
}

impl TokenCorpus {
    pub fn new(vocab: usize, sequences: Vec<Vec<u32>>) -> Result<Self> {
        if vocab == 0 || vocab > u32::MAX as usize {
            return Err(LordError::Input(format!("vocab size {vocab} out of range")));
        }
        for (i, s) in sequences.iter().enumerate() {
            if let Some(&bad) = s.iter().find(|&&t| t as usize >= vocab) {
                return Err(LordError::Input(format!("sequence {i}: token id {bad} ≥ vocab {vocab}")));
            }
        }
        Ok(TokenCorpus { vocab, sequences })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Drop sequences shorter than `min_len` tokens.
    pub fn filter_min_len(&self, min_len: usize) -> TokenCorpus {
        TokenCorpus {
            vocab: self.vocab,
            sequences: self.sequences.iter().filter(|s| s.len() >= min_len).cloned().collect(),
        }
    }

    /// Keep whole sequences, in order, and cut the last one so that at most
    /// `max_tokens` tokens remain.
    pub fn take_tokens(&self, max_tokens: usize) -> TokenCorpus {
        let mut left = max_tokens;
        let mut sequences = Vec::new();
        for s in &self.sequences {
            if left == 0 {
                break;
            }
            let n = s.len().min(left);
            sequences.push(s[..n].to_vec());
            left -= n;
        }
        TokenCorpus { vocab: self.vocab, sequences }
    }

    /// Split every sequence into windows of at most `seq_len` tokens starting
    /// every `stride` tokens. Windows shorter than two tokens are dropped.
    pub fn windows(&self, seq_len: usize, stride: usize) -> Result<Vec<&[u32]>> {
        if seq_len < 2 || stride == 0 {
            return Err(LordError::Input(format!(
                "window length must be ≥ 2 and stride ≥ 1, got {seq_len} and {stride}"
            )));
        }
        let mut out = Vec::new();
        for s in &self.sequences {
            let mut start = 0;
            while start + 1 < s.len() {
                let end = (start + seq_len).min(s.len());
                out.push(&s[start..end]);
                if end == s.len() {
                    break;
                }
                start += stride;
            }
        }
        Ok(out)
    }
}

/// Parameters of the Zipf–Markov corpus generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    /// Rank-frequency exponent of the unigram distribution.
    pub exponent: f64,
    /// Probability that a position repeats a recent token.
    pub copy_prob: f64,
    /// Largest look-back of a repeat.
    pub max_lag: usize,
    /// Tokens per sequence (the last sequence may be shorter).
    pub seq_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { exponent: 1.1, copy_prob: 0.25, max_lag: 8, seq_len: 256 }
    }
}

/// Seeded synthetic corpus of `n_tokens` tokens.
///
/// Each position either repeats one of the previous `max_lag` tokens of its
/// sequence or draws a fresh token from a Zipf law over a seeded permutation
/// of the vocabulary. Repeats leave the unigram marginal Zipfian while giving
/// the stream short-range structure.
pub fn synth_corpus(vocab: usize, n_tokens: usize, seed: u64, cfg: CorpusConfig) -> Result<TokenCorpus> {
    if vocab < 4 {
        return Err(LordError::Input(format!("vocab must be at least 4, got {vocab}")));
    }
    if cfg.seq_len == 0 || !(0.0..1.0).contains(&cfg.copy_prob) || !(cfg.exponent > 0.0) {
        return Err(LordError::Input(format!("invalid corpus configuration {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = (0..vocab as u32).collect();
    ids.shuffle(&mut rng);
    let zipf = Zipf::new(vocab as f64, cfg.exponent).map_err(|e| LordError::Input(e.to_string()))?;

    let mut sequences = Vec::with_capacity(n_tokens.div_ceil(cfg.seq_len));
    let mut left = n_tokens;
    while left > 0 {
        let n = left.min(cfg.seq_len);
        let mut s: Vec<u32> = Vec::with_capacity(n);
        for pos in 0..n {
            let tok = if pos > 0 && cfg.max_lag > 0 && rng.random_bool(cfg.copy_prob) {
                let lag = rng.random_range(1..=cfg.max_lag.min(pos));
                s[pos - lag]
            } else {
                let rank = zipf.sample(&mut rng) as usize;
                ids[rank.clamp(1, vocab) - 1]
            };
            s.push(tok);
        }
        sequences.push(s);
        left -= n;
    }
    TokenCorpus::new(vocab, sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_are_non_overlapping_by_default() {
        let c = TokenCorpus::new(10, vec![(0..7).collect(), vec![1]]).unwrap();
        let w = c.windows(3, 3).unwrap();
        assert_eq!(w, vec![&[0, 1, 2][..], &[3, 4, 5], &[6]].into_iter().filter(|w| w.len() >= 2).collect::<Vec<_>>());
    }

    #[test]
    fn sliding_windows_reach_the_end() {
        let c = TokenCorpus::new(10, vec![(0..6).collect()]).unwrap();
        let w = c.windows(4, 2).unwrap();
        assert_eq!(w, vec![&[0, 1, 2, 3][..], &[2, 3, 4, 5]]);
    }

    #[test]
    fn rejects_out_of_range_ids() {
        assert!(TokenCorpus::new(4, vec![vec![0, 4]]).is_err());
    }

    #[test]
    fn take_tokens_cuts_last_sequence() {
        let c = TokenCorpus::new(10, vec![vec![1; 5], vec![2; 5]]).unwrap();
        let t = c.take_tokens(7);
        assert_eq!(t.total_tokens(), 7);
        assert_eq!(t.sequences()[1], vec![2, 2]);
    }

    #[test]
    fn synth_length_and_determinism() {
        let cfg = CorpusConfig { seq_len: 100, ..Default::default() };
        let a = synth_corpus(32, 1050, 9, cfg).unwrap();
        assert_eq!(a.total_tokens(), 1050);
        assert_eq!(a.len(), 11);
        assert_eq!(a, synth_corpus(32, 1050, 9, cfg).unwrap());
    }
}
