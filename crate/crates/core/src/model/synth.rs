use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Block, Linear, Norm, Projection, ToyModel};
use crate::decompose::DenseLayer;
use crate::error::{LordError, Result};
use crate::linalg::Matrix;
use crate::planner::{ArchDescriptor, GroupSpec, Positions};

/// Largest model `synth_model` will build.
pub const MAX_SYNTH_PARAMS: u64 = 50_000_000;

const BIAS_STD: f64 = 0.02;

/// Weight initialization for the block projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Entries i.i.d. `N(0, 1/d2)`.
    Gaussian,
    /// `W = Σᵢ σᵢ uᵢ vᵢᵀ` with random orthonormal `uᵢ`, `vᵢ` and
    /// `σᵢ ∝ i^(−p)`, scaled so that `‖W‖_F² = d1` like the Gaussian case.
    SpectralDecay(f64),
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Init::Gaussian => f.write_str("gaussian"),
            Init::SpectralDecay(p) => write!(f, "spectral-decay:{p}"),
        }
    }
}

impl FromStr for Init {
    type Err = LordError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "gaussian" {
            return Ok(Init::Gaussian);
        }
        let bad = || LordError::Input(format!("unknown init `{s}`, expected `gaussian` or `spectral-decay:P`"));
        let p = s.strip_prefix("spectral-decay:").ok_or_else(bad)?;
        let p: f64 = p.parse().map_err(|_| bad())?;
        if !p.is_finite() || p < 0.0 {
            return Err(LordError::Input(format!("spectral-decay exponent must be ≥ 0, got {p}")));
        }
        Ok(Init::SpectralDecay(p))
    }
}

/// Build a seeded model for `arch`. Identical inputs give bitwise-identical
/// weights.
pub fn synth_model(arch: &ArchDescriptor, seed: u64, init: Init) -> Result<ToyModel> {
    arch.validate()?;
    let n = arch.param_count();
    if n > MAX_SYNTH_PARAMS {
        return Err(LordError::Input(format!(
            "architecture `{}` has {n} parameters; synthetic models are limited to {MAX_SYNTH_PARAMS}",
            arch.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = arch.hidden;
    let emb_std = 1.0 / (d as f64).sqrt();

    let wte = gaussian(&mut rng, arch.vocab, d, emb_std);
    let wpe = match arch.positions {
        Positions::Learned => Some(gaussian(&mut rng, arch.context, d, emb_std)),
        Positions::Rotary => None,
    };

    let mut blocks = Vec::with_capacity(arch.n_layers);
    for i in 0..arch.n_layers {
        let mut projs = Vec::with_capacity(4);
        for spec in arch.block_groups() {
            projs.push(projection(&mut rng, spec, i, init)?);
        }
        let mut it = projs.into_iter();
        let mut next = || it.next().expect("four projections per block");
        blocks.push(Block {
            norm1: Norm::identity(arch.norm, d),
            norm2: (!arch.parallel_residual).then(|| Norm::identity(arch.norm, d)),
            qkv: next(),
            out: next(),
            mlp_in: next(),
            down: next(),
        });
    }

    let lm_head = (!arch.tied_embeddings).then(|| gaussian(&mut rng, arch.vocab, d, emb_std));
    let lm_head_bias = arch.lm_head_bias.then(|| bias(&mut rng, arch.vocab));
    Ok(ToyModel {
        arch: arch.clone(),
        wte,
        wpe,
        blocks,
        norm_f: Norm::identity(arch.norm, d),
        lm_head,
        lm_head_bias,
    })
}

fn projection(rng: &mut ChaCha8Rng, spec: GroupSpec, block: usize, init: Init) -> Result<Projection> {
    let name = spec.full_name(block);
    // Stacked members are initialized independently, as separate layers
    // would be.
    let parts: Vec<Matrix> = spec
        .members
        .iter()
        .map(|&(_, d1)| match init {
            Init::Gaussian => gaussian(rng, d1, spec.d2, 1.0 / (spec.d2 as f64).sqrt()),
            Init::SpectralDecay(p) => spectral(rng, d1, spec.d2, p),
        })
        .collect();
    let w = Matrix::vstack(&parts.iter().collect::<Vec<_>>())?;
    let b = spec.bias.then(|| bias(rng, spec.d1));
    let linear = Linear::Dense(DenseLayer::new(name.clone(), w, b)?);
    Ok(Projection { name, spec, linear })
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        (z * std) as f32
    })
}

fn bias(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let dist = Normal::new(0.0, BIAS_STD).expect("positive std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

/// `k` orthonormal columns of length `n`, row-major `n × k`, by modified
/// Gram–Schmidt on a Gaussian matrix.
fn orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, c)| *x -= dot * c);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    let mut out = vec![0.0; n * k];
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            out[i * k + j] = x;
        }
    }
    out
}

fn spectral(rng: &mut ChaCha8Rng, d1: usize, d2: usize, p: f64) -> Matrix {
    let k = d1.min(d2);
    let u = orthonormal(rng, d1, k);
    let v = orthonormal(rng, d2, k);
    let raw: Vec<f64> = (1..=k).map(|i| (i as f64).powf(-p)).collect();
    let scale = (d1 as f64 / raw.iter().map(|s| s * s).sum::<f64>()).sqrt();
    let s: Vec<f64> = raw.iter().map(|x| x * scale).collect();
    let mut w = vec![0.0f64; d1 * d2];
    for i in 0..d1 {
        let row = &mut w[i * d2..(i + 1) * d2];
        for (l, sl) in s.iter().enumerate() {
            let c = u[i * k + l] * sl;
            for (j, x) in row.iter_mut().enumerate() {
                *x += c * v[j * k + l];
            }
        }
    }
    Matrix::from_f64(d1, d2, &w).expect("sizes match")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_parses() {
        assert_eq!("gaussian".parse::<Init>().unwrap(), Init::Gaussian);
        assert_eq!("spectral-decay:2".parse::<Init>().unwrap(), Init::SpectralDecay(2.0));
        assert!("spectral-decay:-1".parse::<Init>().is_err());
        assert!("uniform".parse::<Init>().is_err());
    }

    #[test]
    fn spectral_frobenius_matches_gaussian_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = spectral(&mut rng, 24, 40, 1.5);
        assert!((w.frobenius_norm().powi(2) - 24.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_large_architectures() {
        let arch = ArchDescriptor::builtin("starcoder-16b").unwrap();
        assert!(matches!(synth_model(&arch, 0, Init::Gaussian), Err(LordError::Input(_))));
    }
}
