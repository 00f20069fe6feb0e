//! `lord`: plan, calibrate, factor, evaluate and time low-rank decompositions
//! of toy transformer checkpoints.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lord_core::{ErrorClass, LordError};

#[derive(Parser)]
#[command(name = "lord", version, about = "Low-rank decomposition of transformer linear layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer table: kind, shape, aspect ratio, parity rank and parity reduction.
    Inspect {
        /// Model file, architecture JSON, or a built-in architecture name.
        input: String,
    },
    /// Write a compression plan.
    Plan(PlanArgs),
    /// Build a seeded synthetic model.
    SynthModel {
        /// Architecture JSON or built-in name.
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `gaussian` or `spectral-decay:P`.
        #[arg(long, default_value = "spectral-decay:2")]
        init: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build a seeded synthetic token corpus.
    SynthCorpus(CorpusArgs),
    /// Accumulate output statistics for every target of a plan.
    Calibrate {
        model: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Calibration token budget.
        #[arg(long, default_value_t = 64 * 256)]
        max_tokens: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Apply a plan to a model.
    Decompose {
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Calibration statistics; required for AFM plans.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "exact")]
        bias_mode: commands::BiasArg,
        #[arg(long, value_enum, default_value = "centered")]
        centering: commands::CenteringArg,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Perplexity of a model on a corpus.
    EvalPpl {
        model: PathBuf,
        corpus: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
        /// Also write a one-row CSV summary.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// AFM perplexity and parameter count across ranks.
    Sweep(SweepArgs),
    /// Time dense and factored forward passes.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct PlanArgs {
    /// Model file, architecture JSON, or a built-in architecture name.
    input: String,
    /// Comma-separated layer kinds, e.g. `mlp_down,attn_qkv`.
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<String>,
    /// Fixed rank for every target.
    #[arg(long, conflicts_with = "rank_reduction", required_unless_present = "rank_reduction")]
    rank: Option<usize>,
    /// Percent rank reduction, e.g. `25%`; the rank is rounded to `--multiple`.
    #[arg(long)]
    rank_reduction: Option<String>,
    #[arg(long, default_value_t = 128)]
    multiple: usize,
    #[arg(long, default_value = "afm")]
    method: String,
    /// Factor even near-square layers (aspect ratio above 0.9).
    #[arg(long)]
    no_skip: bool,
    /// Refuse plans that grow any layer by more than this percentage.
    #[arg(long)]
    max_growth: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
pub struct CorpusArgs {
    #[arg(long, required_unless_present = "from_model")]
    vocab: Option<usize>,
    #[arg(long)]
    tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tokens per sequence.
    #[arg(long, default_value_t = 256)]
    seq_len: usize,
    /// Zipf exponent of the unigram distribution.
    #[arg(long, default_value_t = 1.1)]
    exponent: f64,
    /// Sample the corpus from this model instead of the Zipf-Markov generator.
    #[arg(long, conflicts_with = "vocab")]
    from_model: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Clone, Copy)]
pub struct WindowArgs {
    /// Evaluation window; defaults to min(256, context).
    #[arg(long)]
    seq_len: Option<usize>,
    /// Window start spacing; defaults to the window length.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
pub struct SweepArgs {
    model: PathBuf,
    /// Evaluation corpus.
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    /// Calibration corpus; defaults to the evaluation corpus.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 64 * 256)]
    max_tokens: usize,
    #[arg(long, default_value = "afm")]
    method: String,
    #[arg(long)]
    no_skip: bool,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "512,1024")]
    seq_lens: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Ranks for truncated-SVD factored variants of the model and its layers.
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    /// Layer kinds factored for the model rows.
    #[arg(long, value_delimiter = ',', default_value = "attn_qkv,attn_out,mlp_up,mlp_gate,mlp_down")]
    targets: Vec<String>,
    /// Extra layer shapes to time, e.g. `6144x1536`.
    #[arg(long, value_delimiter = ',')]
    layer: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV report; a JSON mirror is written next to it.
    #[arg(short, long)]
    output: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<LordError>()) {
        Some(e) => match e.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Format => 2,
            ErrorClass::Numerical => 3,
        },
        None => 2,
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LORD_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| LordError::Input(format!("LORD_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|_| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
