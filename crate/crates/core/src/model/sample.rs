use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ops, TokenCorpus, ToyModel};
use crate::error::{LordError, Result};
use crate::linalg::Matrix;
use crate::planner::{Attention, Positions};

/// Keys and values seen so far, per block and key/value head, stored
/// position-major (`t × head_dim`).
struct Cache {
    keys: Vec<Vec<Vec<f32>>>,
    values: Vec<Vec<Vec<f32>>>,
}

impl ToyModel {
    fn n_kv_heads(&self) -> usize {
        match self.arch.attention {
            Attention::Mha => self.arch.n_heads,
            Attention::Mqa { .. } => 1,
        }
    }

    /// Logits for the token at `pos`, given the cache of positions `< pos`.
    /// Agrees with the last column of [`ToyModel::forward`] up to rounding.
    fn step(&self, cache: &mut Cache, token: u32, pos: usize) -> Result<Vec<f32>> {
        let arch = &self.arch;
        let (d, hd, kv) = (arch.hidden, arch.head_dim(), arch.kv_dim());
        let mut x = Matrix::from_fn(d, 1, |i, _| self.wte.get(token as usize, i));
        if let Some(wpe) = &self.wpe {
            for i in 0..d {
                x.set(i, 0, x.get(i, 0) + wpe.get(pos, i));
            }
        }
        let mut plain = |p: &super::Projection, input: &Matrix| p.linear.forward(input);

        for (b, block) in self.blocks.iter().enumerate() {
            let a = block.norm1.apply(&x);
            let qkv = block.qkv.linear.forward(&a)?;
            for h in 0..self.n_kv_heads() {
                let mut k = qkv.row_slice(d + h * hd, d + (h + 1) * hd)?;
                if arch.positions == Positions::Rotary {
                    ops::apply_rotary(&mut k, pos);
                }
                cache.keys[b][h].extend_from_slice(k.as_slice());
                cache.values[b][h].extend_from_slice(&qkv.as_slice()[d + kv + h * hd..d + kv + (h + 1) * hd]);
            }
            let mut merged = Matrix::zeros(d, 1);
            let scale = 1.0 / (hd as f64).sqrt();
            let mut scores = vec![0.0f64; pos + 1];
            for h in 0..arch.n_heads {
                let kv_head = if self.n_kv_heads() == 1 { 0 } else { h };
                let mut q = qkv.row_slice(h * hd, (h + 1) * hd)?;
                if arch.positions == Positions::Rotary {
                    ops::apply_rotary(&mut q, pos);
                }
                let keys = &cache.keys[b][kv_head];
                let values = &cache.values[b][kv_head];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    let dot: f32 = keys[j * hd..(j + 1) * hd].iter().zip(q.as_slice()).map(|(a, b)| a * b).sum();
                    *s = dot as f64 * scale;
                    max = max.max(*s);
                }
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for i in 0..hd {
                    let o: f64 = scores.iter().enumerate().map(|(j, p)| p / total * values[j * hd + i] as f64).sum();
                    merged.set(h * hd + i, 0, o as f32);
                }
            }
            let attn = block.out.linear.forward(&merged)?;
            match &block.norm2 {
                Some(norm2) => {
                    x.add_assign(&attn)?;
                    let m = norm2.apply(&x);
                    let mlp = self.mlp(block, &m, &mut plain)?;
                    x.add_assign(&mlp)?;
                }
                None => {
                    let mlp = self.mlp(block, &a, &mut plain)?;
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
        Ok(logits.into_vec())
    }

    fn empty_cache(&self) -> Cache {
        let per_block = || vec![Vec::new(); self.n_kv_heads()];
        Cache {
            keys: (0..self.arch.n_layers).map(|_| per_block()).collect(),
            values: (0..self.arch.n_layers).map(|_| per_block()).collect(),
        }
    }

    /// Logits for every position, computed one token at a time.
    pub fn forward_incremental(&self, tokens: &[u32]) -> Result<Matrix> {
        if tokens.is_empty() || tokens.len() > self.arch.context {
            return Err(LordError::Input(format!("{} tokens do not fit the context", tokens.len())));
        }
        let mut cache = self.empty_cache();
        let mut out = Matrix::zeros(self.arch.vocab, tokens.len());
        for (pos, &t) in tokens.iter().enumerate() {
            if t as usize >= self.arch.vocab {
                return Err(LordError::Input(format!("token id {t} out of range")));
            }
            for (i, v) in self.step(&mut cache, t, pos)?.into_iter().enumerate() {
                out.set(i, pos, v);
            }
        }
        Ok(out)
    }
}

/// Draw `n_seqs` sequences of `seq_len` tokens from the model itself by
/// ancestral sampling at temperature 1. The first token of each sequence is
/// uniform over the vocabulary.
///
/// Text drawn this way has the model as its true distribution, so any
/// perturbation of the model can only raise the expected perplexity on it.
pub fn sample_corpus(model: &ToyModel, n_seqs: usize, seq_len: usize, seed: u64) -> Result<TokenCorpus> {
    if seq_len == 0 || seq_len > model.arch.context {
        return Err(LordError::Input(format!(
            "sequence length {seq_len} must be in 1..={}",
            model.arch.context
        )));
    }
    let sequences = (0..n_seqs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut cache = model.empty_cache();
            let mut seq = Vec::with_capacity(seq_len);
            let mut tok = rng.random_range(0..model.arch.vocab as u32);
            seq.push(tok);
            for pos in 0..seq_len - 1 {
                let logits = model.step(&mut cache, tok, pos)?;
                let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
                let weights = logits.iter().map(|&l| (l as f64 - max).exp());
                let dist = WeightedIndex::new(weights).map_err(|e| LordError::Numerical(e.to_string()))?;
                tok = dist.sample(&mut rng) as u32;
                seq.push(tok);
            }
            Ok(seq)
        })
        .collect::<Result<Vec<_>>>()?;
    TokenCorpus::new(model.arch.vocab, sequences)
}
