//! Wall-clock timing of dense versus factored layers and of whole-model
//! forward passes, reported next to the flop model `r (d1 + d2) / (d1 d2)`.
//!
//! Timings are batch 1 and single-threaded: the matrix kernels do not spawn
//! threads, so results do not depend on the rayon pool size.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decompose::{DenseLayer, FactoredLayer};
use crate::error::{LordError, Result};
use crate::linalg::Matrix;
use crate::model::ToyModel;

/// CSV column order of [`BenchRow`].
pub const CSV_HEADER: &str =
    "target,d1,d2,rank,seq_len,runs,warmup,mean_s,median_s,stddev_s,params,rel_time,flops_ratio,pow2_divisor";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub runs: usize,
    pub warmup: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { runs: 10, warmup: 3 }
    }
}

/// One timed configuration. `rank` is empty for the dense baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub target: String,
    pub d1: usize,
    pub d2: usize,
    pub rank: Option<usize>,
    pub seq_len: usize,
    /// Timed runs, warm-up excluded.
    pub runs: usize,
    pub warmup: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub stddev_s: f64,
    pub params: u64,
    /// Median time over the dense baseline's median time.
    pub rel_time: f64,
    /// Predicted multiply-adds over the dense baseline's.
    pub flops_ratio: f64,
    /// Largest power of two dividing the rank.
    pub pow2_divisor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(CSV_HEADER.split(','))
            .and_then(|_| self.rows.iter().try_for_each(|r| out.serialize(r)))
            .map_err(csv_error)?;
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn extend(&mut self, other: BenchReport) {
        self.rows.extend(other.rows);
    }
}

fn csv_error(e: csv::Error) -> LordError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LordError::Io(io),
        other => LordError::Format(format!("csv: {other:?}")),
    }
}

/// Largest power of two dividing `r` (`r > 0`).
pub fn pow2_divisor(r: usize) -> usize {
    r & r.wrapping_neg()
}

/// `r (d1 + d2) / (d1 d2)`.
pub fn flops_ratio(d1: usize, d2: usize, r: usize) -> f64 {
    (r as u128 * (d1 + d2) as u128) as f64 / (d1 as u128 * d2 as u128) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
}

/// Summary of per-run seconds; the standard deviation is the sample one
/// (zero for a single run).
pub fn summarize(times: &[f64]) -> Timing {
    assert!(!times.is_empty(), "at least one run");
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
    let stddev = if times.len() > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Timing { mean, median, stddev }
}

/// Time `f` over `opts.warmup` discarded and `opts.runs` recorded calls.
pub fn time_runs<T>(opts: BenchOptions, mut f: impl FnMut() -> Result<T>) -> Result<Timing> {
    if opts.runs == 0 {
        return Err(LordError::Input("runs must be at least 1".into()));
    }
    for _ in 0..opts.warmup {
        black_box(f()?);
    }
    let mut times = Vec::with_capacity(opts.runs);
    for _ in 0..opts.runs {
        let start = Instant::now();
        black_box(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(summarize(&times))
}

fn seeded(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z as f32
    })
}

/// Dense `W X` against `B (A X)` on the same seeded `d2 × n` input, one row
/// per rank after the dense baseline. Factors are random: timing does not
/// depend on their values.
pub fn bench_layer(
    shape: (usize, usize),
    ranks: &[usize],
    n: usize,
    opts: BenchOptions,
    seed: u64,
) -> Result<BenchReport> {
    let (d1, d2) = shape;
    if d1 == 0 || d2 == 0 || n == 0 {
        return Err(LordError::Input(format!("invalid benchmark shape {d1}x{d2} with n = {n}")));
    }
    let d_min = d1.min(d2);
    if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > d_min) {
        return Err(LordError::Rank { rank: r, max: d_min });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = seeded(d2, n, &mut rng);
    let dense = DenseLayer::new("dense", seeded(d1, d2, &mut rng), None)?;
    let target = format!("layer_{d1}x{d2}");

    let base = time_runs(opts, || dense.forward(&x))?;
    let mut rows = vec![BenchRow {
        target: target.clone(),
        d1,
        d2,
        rank: None,
        seq_len: n,
        runs: opts.runs,
        warmup: opts.warmup,
        mean_s: base.mean,
        median_s: base.median,
        stddev_s: base.stddev,
        params: (d1 * d2) as u64,
        rel_time: 1.0,
        flops_ratio: 1.0,
        pow2_divisor: None,
    }];
    for &r in ranks {
        let layer = FactoredLayer::new("factored", seeded(r, d2, &mut rng), seeded(d1, r, &mut rng), None)?;
        let t = time_runs(opts, || layer.forward(&x))?;
        rows.push(BenchRow {
            target: target.clone(),
            d1,
            d2,
            rank: Some(r),
            seq_len: n,
            runs: opts.runs,
            warmup: opts.warmup,
            mean_s: t.mean,
            median_s: t.median,
            stddev_s: t.stddev,
            params: (r * (d1 + d2)) as u64,
            rel_time: t.median / base.median,
            flops_ratio: flops_ratio(d1, d2, r),
            pow2_divisor: Some(pow2_divisor(r)),
        });
    }
    Ok(BenchReport { rows })
}

/// End-to-end forward time of `model` at each sequence length on seeded
/// tokens. `rel_time` and `flops_ratio` are relative to `baseline` when one
/// is given, otherwise to the model itself.
pub fn bench_model(
    model: &ToyModel,
    baseline: Option<&ToyModel>,
    label: &str,
    rank: Option<usize>,
    seq_lens: &[usize],
    opts: BenchOptions,
) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(seq_lens.len());
    let d = model.arch.hidden;
    for &n in seq_lens {
        if n == 0 || n > model.arch.context {
            return Err(LordError::Input(format!(
                "sequence length {n} must be in 1..={}",
                model.arch.context
            )));
        }
        let tokens: Vec<u32> = (0..n).map(|i| ((i * 7919 + 13) % model.arch.vocab) as u32).collect();
        let t = time_runs(opts, || model.forward(&tokens))?;
        let (base_median, base_flops) = match baseline {
            Some(b) => (time_runs(opts, || b.forward(&tokens))?.median, b.linear_flops_per_token()),
            None => (t.median, model.linear_flops_per_token()),
        };
        rows.push(BenchRow {
            target: label.to_string(),
            d1: d,
            d2: d,
            rank,
            seq_len: n,
            runs: opts.runs,
            warmup: opts.warmup,
            mean_s: t.mean,
            median_s: t.median,
            stddev_s: t.stddev,
            params: model.param_count(),
            rel_time: t.median / base_median,
            flops_ratio: model.linear_flops_per_token() as f64 / base_flops as f64,
            pow2_divisor: rank.map(pow2_divisor),
        });
    }
    Ok(BenchReport { rows })
}
