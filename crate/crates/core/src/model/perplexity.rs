use rayon::prelude::*;

use super::ops::log_prob;
use super::{TokenCorpus, ToyModel};
use crate::error::{LordError, Result};
use crate::linalg::Matrix;

/// Anything that maps a token sequence to `vocab × T` next-token logits.
pub trait LanguageModel: Sync {
    fn vocab(&self) -> usize;
    fn context(&self) -> usize;
    fn logits(&self, tokens: &[u32]) -> Result<Matrix>;
}

impl LanguageModel for ToyModel {
    fn vocab(&self) -> usize {
        self.arch.vocab
    }

    fn context(&self) -> usize {
        self.arch.context
    }

    fn logits(&self, tokens: &[u32]) -> Result<Matrix> {
        self.forward(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllSummary {
    /// Sum of next-token negative log-likelihoods, in nats.
    pub total_nll: f64,
    /// Number of predicted positions.
    pub scored: u64,
}

impl NllSummary {
    pub fn mean_nll(&self) -> f64 {
        self.total_nll / self.scored as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.mean_nll().exp()
    }
}

/// Next-token NLL over windows of `seq_len` tokens taken every `stride`
/// tokens of each sequence. With overlapping windows, each position is scored
/// once, in the first window that reaches it after the previous window's end.
pub fn evaluate_nll(
    model: &impl LanguageModel,
    corpus: &TokenCorpus,
    seq_len: usize,
    stride: usize,
) -> Result<NllSummary> {
    if seq_len < 2 || stride == 0 || stride > seq_len {
        return Err(LordError::Input(format!(
            "need seq_len ≥ 2 and 1 ≤ stride ≤ seq_len, got seq_len {seq_len}, stride {stride}"
        )));
    }
    if seq_len > model.context() {
        return Err(LordError::Input(format!(
            "seq_len {seq_len} exceeds the model context {}",
            model.context()
        )));
    }
    if corpus.vocab() > model.vocab() {
        return Err(LordError::Input(format!(
            "corpus vocab {} exceeds model vocab {}",
            corpus.vocab(),
            model.vocab()
        )));
    }

    // (window, first scored index within the window)
    let mut jobs: Vec<(&[u32], usize)> = Vec::new();
    for s in corpus.sequences() {
        let mut start = 0;
        let mut scored_to = 1;
        while start + 1 < s.len() {
            let end = (start + seq_len).min(s.len());
            jobs.push((&s[start..end], scored_to.max(start + 1) - start));
            scored_to = end;
            if end == s.len() {
                break;
            }
            start += stride;
        }
    }
    if jobs.is_empty() {
        return Err(LordError::Input("corpus has no sequence of at least two tokens".into()));
    }

    let parts: Vec<(f64, u64)> = jobs
        .par_iter()
        .map(|&(w, first)| {
            let logits = model.logits(w)?;
            let mut col = vec![0.0f32; logits.rows()];
            let mut nll = 0.0;
            for t in first..w.len() {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = logits.get(i, t - 1);
                }
                nll -= log_prob(&col, w[t] as usize);
            }
            Ok((nll, (w.len() - first) as u64))
        })
        .collect::<Result<_>>()?;

    let (total_nll, scored) = parts.iter().fold((0.0, 0), |(a, n), &(b, m)| (a + b, n + m));
    if !total_nll.is_finite() {
        return Err(LordError::Numerical("negative log-likelihood is not finite".into()));
    }
    Ok(NllSummary { total_nll, scored })
}

/// `exp` of the mean next-token NLL, see [`evaluate_nll`].
pub fn perplexity(model: &impl LanguageModel, corpus: &TokenCorpus, seq_len: usize, stride: usize) -> Result<f64> {
    Ok(evaluate_nll(model, corpus, seq_len, stride)?.perplexity())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed {
        vocab: usize,
        logits: Vec<f32>,
    }

    impl LanguageModel for Fixed {
        fn vocab(&self) -> usize {
            self.vocab
        }
        fn context(&self) -> usize {
            64
        }
        fn logits(&self, tokens: &[u32]) -> Result<Matrix> {
            Ok(Matrix::from_fn(self.vocab, tokens.len(), |i, _| self.logits[i]))
        }
    }

    #[test]
    fn uniform_logits_give_vocab_size() {
        let m = Fixed { vocab: 7, logits: vec![0.5; 7] };
        let c = TokenCorpus::new(7, vec![vec![1, 2, 3, 4, 5, 6, 0, 1]]).unwrap();
        assert!((perplexity(&m, &c, 8, 8).unwrap() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn sliding_windows_score_each_position_once() {
        let m = Fixed { vocab: 3, logits: vec![0.0, 1.0, 2.0] };
        let c = TokenCorpus::new(3, vec![vec![0; 10]]).unwrap();
        let a = evaluate_nll(&m, &c, 4, 4).unwrap();
        let b = evaluate_nll(&m, &c, 4, 1).unwrap();
        // Disjoint windows cannot predict their own first token.
        assert_eq!(a.scored, 7);
        assert_eq!(b.scored, 9);
        assert!((a.mean_nll() - b.mean_nll()).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_is_an_input_error() {
        let m = Fixed { vocab: 3, logits: vec![0.0; 3] };
        let c = TokenCorpus::new(3, vec![vec![1]]).unwrap();
        assert!(matches!(perplexity(&m, &c, 4, 4), Err(LordError::Input(_))));
    }
}
