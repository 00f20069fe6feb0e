use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use log::{info, warn};
use lord_core::bench::{bench_layer, bench_model, BenchOptions, BenchReport};
use lord_core::decompose::{AfmOptions, BiasMode, Centering};
use lord_core::io;
use lord_core::model::{
    apply_plan, calibrate, evaluate_nll, sample_corpus, synth_corpus, synth_model, CorpusConfig, Init, Linear,
    ToyModel,
};
use lord_core::planner::{
    aspect_ratio, build_plan, parity_rank, parity_reduction, pct_rank_reduction, ArchDescriptor, CompressionPlan,
    LayerKind, Method, Policy, RankSpec,
};
use lord_core::LordError;

use crate::{BenchArgs, Command, CorpusArgs, PlanArgs, SweepArgs, WindowArgs};

#[derive(Clone, Copy, ValueEnum)]
pub enum BiasArg {
    Exact,
    Projected,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CenteringArg {
    Centered,
    Uncentered,
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Inspect { input } => inspect(&input),
        Command::Plan(args) => plan(args),
        Command::SynthModel { arch, seed, init, output } => {
            let (arch, _) = load_arch(&arch)?;
            let init: Init = init.parse()?;
            let model = synth_model(&arch, seed, init)?;
            io::save_model(&model, &output).with_context(|| format!("writing {}", output.display()))?;
            info!("wrote `{}` ({} parameters, init {init}) to {}", arch.name, model.param_count(), output.display());
            Ok(())
        }
        Command::SynthCorpus(args) => synth_corpus_cmd(args),
        Command::Calibrate { model, corpus, plan, max_tokens, output } => {
            let model = load_model(&model)?;
            let corpus = load_corpus(&corpus)?;
            let plan = load_plan(&plan)?;
            let targets: Vec<String> = plan.entries.iter().map(|e| e.target.clone()).collect();
            let capture = calibrate(&model, &corpus, &targets, Some(max_tokens))?;
            io::save_stats(&capture, &output).with_context(|| format!("writing {}", output.display()))?;
            info!(
                "captured {} targets over {} tokens into {}",
                capture.len(),
                capture.token_count().unwrap_or(0),
                output.display()
            );
            Ok(())
        }
        Command::Decompose { model, plan, stats, bias_mode, centering, output } => {
            let model = load_model(&model)?;
            let plan = load_plan(&plan)?;
            let capture = match &stats {
                Some(p) => {
                    let c = io::load_stats(p).with_context(|| format!("reading {}", p.display()))?;
                    io::check_stats(&c, &model)?;
                    Some(c)
                }
                None => None,
            };
            let opts = AfmOptions {
                bias_mode: match bias_mode {
                    BiasArg::Exact => BiasMode::Exact,
                    BiasArg::Projected => BiasMode::Projected,
                },
                centering: match centering {
                    CenteringArg::Centered => Centering::Centered,
                    CenteringArg::Uncentered => Centering::Uncentered,
                },
            };
            if model.param_count() != plan.totals.before {
                return Err(LordError::PlanMismatch(format!(
                    "model has {} parameters but the plan starts from {}",
                    model.param_count(),
                    plan.totals.before
                ))
                .into());
            }
            let out = apply_plan(&model, &plan, capture.as_ref(), opts)?;
            let realized = out.param_count();
            if realized != plan.totals.after {
                return Err(LordError::PlanMismatch(format!(
                    "factored model has {realized} parameters, the plan predicts {}",
                    plan.totals.after
                ))
                .into());
            }
            io::save_model(&out, &output).with_context(|| format!("writing {}", output.display()))?;
            info!(
                "factored {} layers: {} -> {} parameters, written to {}",
                plan.entries.len(),
                plan.totals.before,
                realized,
                output.display()
            );
            Ok(())
        }
        Command::EvalPpl { model, corpus, window, csv } => {
            let model = load_model(&model)?;
            let corpus = load_corpus(&corpus)?;
            let (seq_len, stride) = window_of(window, &model);
            let nll = evaluate_nll(&model, &corpus, seq_len, stride)?;
            println!(
                "perplexity={:.6} scored_tokens={} mean_nll={:.6}",
                nll.perplexity(),
                nll.scored,
                nll.mean_nll()
            );
            if let Some(path) = csv {
                let mut w = csv_writer(&path)?;
                w.write_record(["seq_len", "stride", "scored_tokens", "mean_nll", "perplexity"])?;
                w.write_record([
                    seq_len.to_string(),
                    stride.to_string(),
                    nll.scored.to_string(),
                    nll.mean_nll().to_string(),
                    nll.perplexity().to_string(),
                ])?;
                w.flush()?;
            }
            Ok(())
        }
        Command::Sweep(args) => sweep(args),
        Command::Bench(args) => bench(args),
    }
}

/// A model file, an architecture JSON file, or a built-in architecture name.
fn load_arch(input: &str) -> Result<(ArchDescriptor, Option<ToyModel>)> {
    let path = Path::new(input);
    if !path.exists() {
        return match ArchDescriptor::builtin(input) {
            Some(a) => Ok((a, None)),
            None => Err(LordError::Input(format!(
                "`{input}` is neither a file nor a built-in architecture ({})",
                ArchDescriptor::BUILTIN_NAMES.join(", ")
            ))
            .into()),
        };
    }
    let mut magic = [0u8; 8];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .with_context(|| format!("reading {input}"))?;
    if n == 8 && &magic == io::MODEL_MAGIC {
        let model = load_model(path)?;
        return Ok((model.arch.clone(), Some(model)));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {input}"))?;
    let arch: ArchDescriptor = serde_json::from_str(&text)
        .map_err(|e| LordError::Format(format!("{input}: not a model file or architecture JSON: {e}")))?;
    arch.validate()?;
    Ok((arch, None))
}

fn load_model(path: &Path) -> Result<ToyModel> {
    io::load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_corpus(path: &Path) -> Result<lord_core::model::TokenCorpus> {
    io::load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_plan(path: &Path) -> Result<CompressionPlan> {
    io::load_plan(path).with_context(|| format!("loading plan {}", path.display()))
}

fn parse_targets(names: &[String]) -> Result<Vec<LayerKind>> {
    Ok(names.iter().map(|s| s.trim().parse()).collect::<lord_core::Result<_>>()?)
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(s.parse()?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn window_of(w: WindowArgs, model: &ToyModel) -> (usize, usize) {
    let seq_len = w.seq_len.unwrap_or(256.min(model.arch.context));
    (seq_len, w.stride.unwrap_or(seq_len))
}

fn inspect(input: &str) -> Result<()> {
    let (arch, model) = load_arch(input)?;
    println!(
        "{}: {} blocks, hidden {}, vocab {}, {} parameters",
        arch.name,
        arch.n_layers,
        arch.hidden,
        arch.vocab,
        arch.param_count()
    );
    println!(
        "{:<18} {:<18} {:>12} {:>7} {:>11} {:>9}  state",
        "layer", "kind", "shape", "alpha", "parity_rank", "parity_%"
    );
    let row = |name: &str, g: &lord_core::planner::GroupSpec, state: String| {
        let kinds: Vec<&str> = g.kinds.iter().map(|k| k.as_str()).collect();
        let alpha = aspect_ratio(g.d1, g.d2);
        println!(
            "{:<18} {:<18} {:>12} {:>7.4} {:>11} {:>8.2}%  {state}",
            name,
            kinds.join("+"),
            format!("{}x{}", g.d1, g.d2),
            alpha,
            parity_rank(g.d1, g.d2),
            parity_reduction(alpha)
        );
    };
    match &model {
        Some(m) => {
            for p in m.projections() {
                let state = match &p.linear {
                    Linear::Dense(_) => "dense".to_string(),
                    Linear::Factored(f) => format!("rank {}", f.rank()),
                };
                row(&p.name, &p.spec, state);
            }
            if m.param_count() != arch.param_count() {
                println!("stored parameters: {}", m.param_count());
            }
        }
        None => {
            for g in arch.block_groups() {
                row(&format!("h.*.{}", g.suffix), &g, format!("x{}", arch.n_layers));
            }
        }
    }
    Ok(())
}

fn plan(args: PlanArgs) -> Result<()> {
    let (arch, _) = load_arch(&args.input)?;
    let rank = match (args.rank, &args.rank_reduction) {
        (Some(r), _) => RankSpec::Fixed(r),
        (None, Some(p)) => {
            let v: f64 = p
                .trim()
                .trim_end_matches('%')
                .parse()
                .map_err(|_| LordError::Input(format!("invalid rank reduction `{p}`")))?;
            RankSpec::Reduction(v)
        }
        (None, None) => unreachable!("clap requires one of --rank and --rank-reduction"),
    };
    let mut policy = Policy::new(parse_targets(&args.targets)?, rank);
    policy.multiple = args.multiple;
    policy.method = parse_method(&args.method)?;
    if args.no_skip {
        policy.skip_alpha_above = None;
    }
    policy.max_param_growth_pct = args.max_growth;
    let plan = build_plan(&arch, &policy)?;
    for e in plan.entries.iter().filter_map(|e| e.warning.as_ref().map(|w| (e, w))) {
        warn!("{}: {}", e.0.target, e.1);
    }
    io::save_plan(&plan, &args.output).with_context(|| format!("writing {}", args.output.display()))?;
    println!(
        "entries={} params_before={} params_after={} pct_param_change={:.4}",
        plan.entries.len(),
        plan.totals.before,
        plan.totals.after,
        plan.pct_param_change()
    );
    Ok(())
}

fn synth_corpus_cmd(args: CorpusArgs) -> Result<()> {
    let corpus = match &args.from_model {
        Some(path) => {
            let model = load_model(path)?;
            if args.seq_len == 0 || args.tokens % args.seq_len != 0 {
                return Err(LordError::Input(format!(
                    "--tokens {} must be a positive multiple of --seq-len {} when sampling from a model",
                    args.tokens, args.seq_len
                ))
                .into());
            }
            sample_corpus(&model, args.tokens / args.seq_len, args.seq_len, args.seed)?
        }
        None => {
            let cfg = CorpusConfig { exponent: args.exponent, seq_len: args.seq_len, ..CorpusConfig::default() };
            synth_corpus(args.vocab.expect("required without --from-model"), args.tokens, args.seed, cfg)?
        }
    };
    io::save_corpus(&corpus, &args.output).with_context(|| format!("writing {}", args.output.display()))?;
    info!(
        "wrote {} sequences, {} tokens to {}",
        corpus.len(),
        corpus.total_tokens(),
        args.output.display()
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let eval = load_corpus(&args.corpus)?;
    let calib = match &args.calib {
        Some(p) => load_corpus(p)?,
        None => eval.clone(),
    };
    let (seq_len, stride) = window_of(args.window, &model);
    let method = parse_method(&args.method)?;
    let targets = parse_targets(&args.targets)?;
    if args.ranks.is_empty() {
        return Err(LordError::Input("no ranks given".into()).into());
    }

    let plan_for = |r: usize| -> Result<CompressionPlan> {
        let mut policy = Policy::new(targets.clone(), RankSpec::Fixed(r));
        policy.method = method;
        if args.no_skip {
            policy.skip_alpha_above = None;
        }
        Ok(build_plan(&model.arch, &policy)?)
    };
    // Statistics come from the dense model and do not depend on the rank.
    let capture = match method {
        Method::Afm => {
            let first = plan_for(args.ranks[0])?;
            let names: Vec<String> = first.entries.iter().map(|e| e.target.clone()).collect();
            Some(calibrate(&model, &calib, &names, Some(args.max_tokens))?)
        }
        Method::Svd => None,
    };

    let mut w = csv_writer(&args.output)?;
    w.write_record(["rank", "pct_rank_reduction", "params_after", "pct_param_change", "perplexity"])?;
    for &r in &args.ranks {
        let plan = plan_for(r)?;
        let d_min = plan.entries.iter().map(|e| e.d1.min(e.d2)).min().expect("plan has entries");
        let factored = apply_plan(&model, &plan, capture.as_ref(), AfmOptions::default())?;
        let ppl = evaluate_nll(&factored, &eval, seq_len, stride)?.perplexity();
        info!("rank {r}: perplexity {ppl:.4}, {} parameters", plan.totals.after);
        w.write_record([
            r.to_string(),
            pct_rank_reduction(d_min, r).to_string(),
            plan.totals.after.to_string(),
            plan.pct_param_change().to_string(),
            ppl.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let bad = || LordError::Input(format!("invalid layer shape `{s}`, expected D1xD2"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn bench(args: BenchArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let opts = BenchOptions { runs: args.runs, warmup: args.warmup };
    if args.seq_lens.is_empty() {
        return Err(LordError::Input("no sequence lengths given".into()).into());
    }
    let mut report = bench_model(&model, None, "model", None, &args.seq_lens, opts)?;

    let targets = parse_targets(&args.targets)?;
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for &r in &args.ranks {
        let mut policy = Policy::new(targets.clone(), RankSpec::Fixed(r));
        policy.method = Method::Svd;
        let plan = build_plan(&model.arch, &policy)?;
        for e in &plan.entries {
            if !shapes.contains(&(e.d1, e.d2)) {
                shapes.push((e.d1, e.d2));
            }
        }
        let factored = apply_plan(&model, &plan, None, AfmOptions::default())?;
        report.extend(bench_model(&factored, Some(&model), "model", Some(r), &args.seq_lens, opts)?);
    }
    for s in &args.layer {
        shapes.push(parse_shape(s)?);
    }
    for (i, &(d1, d2)) in shapes.iter().enumerate() {
        let ranks: Vec<usize> = args.ranks.iter().copied().filter(|&r| r <= d1.min(d2)).collect();
        report.extend(bench_layer((d1, d2), &ranks, args.seq_lens[0], opts, args.seed + i as u64)?);
    }

    report.write_csv(BufWriter::new(
        File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?,
    ))?;
    let json = args.output.with_extension("json");
    std::fs::write(&json, report.to_json()).with_context(|| format!("writing {}", json.display()))?;
    print_bench(&report);
    Ok(())
}

fn print_bench(report: &BenchReport) {
    for r in &report.rows {
        let rank = r.rank.map_or("dense".to_string(), |r| r.to_string());
        info!(
            "{} {}x{} rank {rank} n={}: median {:.3} ms, rel_time {:.3}, flops_ratio {:.3}",
            r.target,
            r.d1,
            r.d2,
            r.seq_len,
            r.median_s * 1e3,
            r.rel_time,
            r.flops_ratio
        );
    }
}
