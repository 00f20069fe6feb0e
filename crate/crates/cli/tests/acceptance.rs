//! End-to-end acceptance run: one line per criterion with its tolerance,
//! measured value and wall time. Exits non-zero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use lord_core::bench::{bench_layer, flops_ratio, BenchOptions};
use lord_core::decompose::{decompose_afm, decompose_group, decompose_svd, AfmOptions, DenseLayer, LayerGroup};
use lord_core::io;
use lord_core::linalg::{svd_truncate, Matrix, OutputStats};
use lord_core::model::{apply_plan, calibrate, perplexity, sample_corpus, synth_model, Init, Linear, ToyModel};
use lord_core::planner::{
    build_plan, parity_rank, parity_reduction, pct_rank_reduction, percent_param_change,
    percent_param_change_from_ratio, aspect_ratio, ArchDescriptor, LayerKind, Method, Policy, RankSpec,
};
use lord_core::{ErrorClass, LordError};
use lord_testkit::{discarded_norm, gaussian, jacobi_singular_values, naive_matmul, two_pass_covariance, Dense};

type Outcome = Result<String, String>;

fn to_matrix(d: &Dense) -> Matrix {
    Matrix::new(d.rows, d.cols, d.to_f32()).unwrap()
}

fn to_dense(m: &Matrix) -> Dense {
    Dense::from_f32(m.rows(), m.cols(), m.as_slice())
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn plan_totals() -> Outcome {
    let cases = [
        ("starcoder-16b", LayerKind::MlpDown, [14.9, 14.5, 13.8, 13.2, 12.6, 12.3]),
        ("codegen-16b", LayerKind::AttnQkv, [15.9, 15.6, 15.1, 14.7, 14.3, 14.1]),
    ];
    let ranks = [4480, 4096, 3584, 3072, 2560, 2304];
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (name, kind, labels) in cases {
        let arch = ArchDescriptor::builtin(name).unwrap();
        let mut got = Vec::new();
        for (&r, &label) in ranks.iter().zip(&labels) {
            let total = build_plan(&arch, &Policy::new(vec![kind], RankSpec::Fixed(r))).map_err(e)?.totals.after;
            let b = total as f64 / 1e9;
            worst = worst.max((b - label).abs());
            check((b - label).abs() <= 0.15, || format!("{name} rank {r}: {b:.3}e9 vs {label}e9"))?;
            got.push(format!("{b:.2}"));
        }
        lines.push(format!("{name} {}", got.join("/")));
    }
    Ok(format!("{}; max |Δ| {worst:.3}e9 (tol 0.15e9)", lines.join("; ")))
}

fn parity_algebra() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = |m: usize| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        1 + (state % m as u64) as usize
    };
    for _ in 0..200 {
        let (d1, d2) = (next(65536), next(65536));
        let r = next(d1.min(d2));
        let exact = 100.0 * ((r * (d1 + d2)) as f64 - (d1 * d2) as f64) / (d1 * d2) as f64;
        for v in [
            percent_param_change(d1, d2, r),
            percent_param_change_from_ratio(aspect_ratio(d1, d2), pct_rank_reduction(d1.min(d2), r)),
        ] {
            let rel = (v - exact).abs() / exact.abs().max(1e-300);
            worst = worst.max(if exact == 0.0 { v.abs() } else { rel });
        }
    }
    check(worst <= 1e-9, || format!("closed form off by {worst:e} rel"))?;
    check(parity_reduction(1.0) == 50.0, || format!("parity_reduction(1) = {}", parity_reduction(1.0)))?;
    check(parity_reduction(0.25) == 20.0, || format!("parity_reduction(0.25) = {}", parity_reduction(0.25)))?;
    Ok(format!("200-point grid max rel err {worst:.1e} (tol 1e-9); parity 50% / 20% exact"))
}

fn eckart_young() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for k in 0..50u64 {
        let d1 = 8 + ((k * 37 + 11) % 121) as usize;
        let d2 = 8 + ((k * 53 + 5) % 121) as usize;
        let dmin = d1.min(d2);
        let r = 1 + ((k * 29) as usize % (3 * dmin / 4));
        let w = to_matrix(&gaussian(d1, d2, 1000 + k));
        let f = svd_truncate(&w, r).map_err(e)?;
        let best = w.frobenius_distance(&f.reconstruct()).map_err(e)?;
        let oracle = discarded_norm(&jacobi_singular_values(&to_dense(&w)), r);
        let rel = (best - oracle).abs() / oracle;
        worst = worst.max(rel);
        check(rel <= 1e-4, || format!("{d1}x{d2} r={r}: {best} vs oracle {oracle}"))?;
        // Ten unrelated factorizations and ten perturbations of the optimum.
        let u = to_dense(&f.u);
        let sv = Dense { rows: r, cols: d2, data: (0..r * d2).map(|i| f.s[i / d2] * f.v.get(i % d2, i / d2) as f64).collect() };
        for j in 0..20u64 {
            let (b, a) = if j < 10 {
                (gaussian(d1, r, 7000 + 31 * k + j), gaussian(r, d2, 9000 + 31 * k + j))
            } else {
                let eps = 1e-3 * (j - 9) as f64;
                let nb = gaussian(d1, r, 11000 + 31 * k + j);
                let na = gaussian(r, d2, 13000 + 31 * k + j);
                (
                    Dense { data: u.data.iter().zip(&nb.data).map(|(x, n)| x + eps * n).collect(), ..u.clone() },
                    Dense { data: sv.data.iter().zip(&na.data).map(|(x, n)| x + eps * n).collect(), ..sv.clone() },
                )
            };
            let other = to_dense(&w).sub(&naive_matmul(&b, &a)).frobenius();
            min_margin = min_margin.min(other - best);
            check(best <= other, || format!("{d1}x{d2} r={r}: factorization {j} beats SVD ({other} < {best})"))?;
        }
    }
    Ok(format!("50 matrices: max rel err vs discarded spectrum {worst:.1e} (tol 1e-4); 1000 competitors, min margin {min_margin:.2e}"))
}

fn afm_recovery() -> Outcome {
    let (d1, d2, k) = (96, 64, 6);
    let w = to_matrix(&gaussian(d1, d2, 1));
    let layer = DenseLayer::new("layer", w.clone(), Some(gaussian(d1, 1, 2).to_f32())).map_err(e)?;
    let p = gaussian(d2, k, 3);
    let calib = to_matrix(&naive_matmul(&p, &gaussian(k, 500, 4)));
    let mut stats = OutputStats::new(d1);
    stats.update(&layer.forward(&calib).map_err(e)?).map_err(e)?;
    let f = decompose_afm(&layer, &stats, k, AfmOptions::default()).map_err(e)?;
    let held = to_matrix(&naive_matmul(&p, &gaussian(k, 200, 5)));
    let y = layer.forward(&held).map_err(e)?;
    let rel = y.frobenius_distance(&f.forward(&held).map_err(e)?).map_err(e)? / y.frobenius_norm();
    check(rel <= 1e-3, || format!("held-out error {rel:e} at rank {k}"))?;

    let iso = to_matrix(&gaussian(d2, 500, 6));
    let mut full = OutputStats::new(d1);
    full.update(&layer.forward(&iso).map_err(e)?).map_err(e)?;
    let g = decompose_afm(&layer, &full, d2, AfmOptions::default()).map_err(e)?;
    let wrel = g.reconstruct().relative_error(&w).map_err(e)?;
    check(wrel <= 1e-4, || format!("full-rank BA vs W {wrel:e}"))?;
    Ok(format!("held-out rel err {rel:.1e} (tol 1e-3); full-rank BA=W rel err {wrel:.1e} (tol 1e-4)"))
}

fn group_equivalence() -> Outcome {
    let d = 64;
    let members: Vec<DenseLayer> = ["q", "k", "v"]
        .iter()
        .enumerate()
        .map(|(i, n)| DenseLayer::new(*n, to_matrix(&gaussian(d, d, 20 + i as u64)), Some(gaussian(d, 1, 30 + i as u64).to_f32())).unwrap())
        .collect();
    let (group, biases) = LayerGroup::from_layers(&members).map_err(e)?;
    let x = to_matrix(&gaussian(d, 400, 40));
    let stacked_bias: Vec<f32> = biases.iter().flat_map(|b| b.clone().unwrap()).collect();
    let stacked = DenseLayer::new("qkv", group.stacked().clone(), Some(stacked_bias)).map_err(e)?;
    let mut stats = OutputStats::new(3 * d);
    stats.update(&stacked.forward(&x).map_err(e)?).map_err(e)?;
    let mut worst: f64 = 0.0;
    for r in [16, 48, d] {
        let parts = decompose_group(&group, &biases, &stats, r, AfmOptions::default()).map_err(e)?;
        let oracle = decompose_afm(&stacked, &stats, r, AfmOptions::default()).map_err(e)?;
        for (i, p) in parts.iter().enumerate() {
            let slice = oracle.b.row_slice(i * d, (i + 1) * d).map_err(e)?;
            let out = p.forward(&x).map_err(e)?;
            let want = oracle.forward(&x).map_err(e)?.row_slice(i * d, (i + 1) * d).map_err(e)?;
            for rel in [
                p.a.relative_error(&oracle.a).map_err(e)?,
                p.b.relative_error(&slice).map_err(e)?,
                out.relative_error(&want).map_err(e)?,
            ] {
                worst = worst.max(rel);
            }
        }
    }
    check(worst <= 1e-6, || format!("group vs stacked oracle rel err {worst:e}"))?;
    Ok(format!("QKV d={d}, r in {{16, 48, 64}}: max rel err {worst:.1e} (tol 1e-6)"))
}

fn statistics() -> Outcome {
    let (dim, n, batch) = (24, 100_000, 1000);
    let y = gaussian(dim, n, 77);
    // Offset so the mean is far from zero.
    let shifted = Dense { data: y.data.iter().enumerate().map(|(i, v)| v + 3.0 + (i / n) as f64).collect(), ..y };
    let m = to_matrix(&shifted);
    let batches: Vec<Matrix> = (0..n / batch).map(|b| m.col_slice(b * batch, (b + 1) * batch).unwrap()).collect();
    let mut seq = OutputStats::new(dim);
    for b in &batches {
        seq.update(b).map_err(e)?;
    }
    let cov = |s: &OutputStats| Dense { rows: dim, cols: dim, data: s.covariance_f64().unwrap() };
    let oracle = two_pass_covariance(&to_dense(&m));
    let stream_err = cov(&seq).sub(&oracle).frobenius() / oracle.frobenius();
    check(stream_err <= 1e-7, || format!("streaming vs two-pass {stream_err:e}"))?;

    let shards: Vec<OutputStats> = batches
        .iter()
        .map(|b| {
            let mut s = OutputStats::new(dim);
            s.update(b).unwrap();
            s
        })
        .collect();
    let merged = shards.iter().try_fold(OutputStats::new(dim), |acc, s| acc.merge(s)).map_err(e)?;
    let reference = cov(&seq);
    let merge_err = cov(&merged).sub(&reference).frobenius() / reference.frobenius();
    check(merge_err <= 1e-9, || format!("shard merge vs sequential {merge_err:e}"))?;

    let mut perm_err: f64 = 0.0;
    for stride in [7usize, 31, 53] {
        let mut s = OutputStats::new(dim);
        for k in 0..batches.len() {
            s.update(&batches[(k * stride) % batches.len()]).map_err(e)?;
        }
        perm_err = perm_err.max(cov(&s).sub(&reference).frobenius() / reference.frobenius());
    }
    check(perm_err <= 1e-9, || format!("permuted batches {perm_err:e}"))?;
    Ok(format!(
        "1e5 tokens: streaming {stream_err:.1e} (tol 1e-7); merge {merge_err:.1e} (tol 1e-9); permutation {perm_err:.1e} (tol 1e-9)"
    ))
}

fn perplexity_trend() -> Outcome {
    let arch = ArchDescriptor::builtin("toy-128").unwrap();
    let model = synth_model(&arch, 7, Init::SpectralDecay(2.0)).map_err(e)?;
    let calib = sample_corpus(&model, 64, 256, 1).map_err(e)?;
    let eval = sample_corpus(&model, 32, 256, 2).map_err(e)?;
    let targets = vec![LayerKind::AttnQkv, LayerKind::MlpUp, LayerKind::MlpDown];
    let plan_for = |r| build_plan(&arch, &Policy::new(targets.clone(), RankSpec::Fixed(r)));
    let names: Vec<String> = plan_for(128).map_err(e)?.entries.iter().map(|x| x.target.clone()).collect();
    let capture = calibrate(&model, &calib, &names, None).map_err(e)?;
    let dense = perplexity(&model, &eval, 256, 256).map_err(e)?;
    let ppl_at = |r: usize| -> Result<f64, String> {
        let f = apply_plan(&model, &plan_for(r).map_err(e)?, Some(&capture), AfmOptions::default()).map_err(e)?;
        perplexity(&f, &eval, 256, 256).map_err(e)
    };
    let mut curve = Vec::new();
    let mut worst_inversion: f64 = 0.0;
    let mut prev: Option<f64> = None;
    for r in [32, 48, 64, 96, 128] {
        let p = ppl_at(r)?;
        if let Some(q) = prev {
            worst_inversion = worst_inversion.max((p - q) / q);
        }
        prev = Some(p);
        curve.push(format!("{r}:{p:.3}"));
    }
    let at115 = (ppl_at(115)? - dense) / dense;
    check(worst_inversion <= 0.005, || format!("inversion {:.3}% in {}", 100.0 * worst_inversion, curve.join(" ")))?;
    check(at115 <= 0.01, || format!("r=115 increase {:.3}%", 100.0 * at115))?;
    Ok(format!(
        "dense {dense:.3}; {}; worst inversion {:+.4}% (tol 0.5%); r=115 {:+.4}% (tol 1%)",
        curve.join(" "),
        100.0 * worst_inversion,
        100.0 * at115
    ))
}

fn forward_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut layers = 0;
    for name in ["toy-64", "toy-swiglu"] {
        let arch = ArchDescriptor::builtin(name).unwrap();
        let model = synth_model(&arch, 5, Init::SpectralDecay(2.0)).map_err(e)?;
        let tokens: Vec<u32> = (0..48).map(|i| ((i * 31 + 7) % arch.vocab) as u32).collect();
        let base = model.forward(&tokens).map_err(e)?;
        let names: Vec<String> = model.projections().map(|p| p.name.clone()).collect();
        for n in &names {
            let mut m: ToyModel = model.clone();
            let proj = m.projection_mut(n).unwrap();
            let Linear::Dense(dense) = &proj.linear else { unreachable!() };
            let full = dense.d1().min(dense.d2());
            proj.linear = Linear::Factored(decompose_svd(dense, full).map_err(e)?);
            let rel = m.forward(&tokens).map_err(e)?.relative_error(&base).map_err(e)?;
            worst = worst.max(rel);
            layers += 1;
            check(rel <= 1e-3, || format!("{name} {n}: logits rel err {rel:e}"))?;
        }
        let policy = Policy::new(vec![LayerKind::AttnQkv, LayerKind::MlpGate, LayerKind::MlpUp, LayerKind::MlpDown], RankSpec::Fixed(24));
        let plan = build_plan(&arch, &policy).map_err(e)?;
        let targets: Vec<String> = plan.entries.iter().map(|x| x.target.clone()).collect();
        let corpus = sample_corpus(&model, 4, 64, 3).map_err(e)?;
        let cap = calibrate(&model, &corpus, &targets, None).map_err(e)?;
        let f = apply_plan(&model, &plan, Some(&cap), AfmOptions::default()).map_err(e)?;
        check(f.param_count() == plan.totals.after, || {
            format!("{name}: realized {} vs planned {}", f.param_count(), plan.totals.after)
        })?;
    }
    Ok(format!("{layers} single-layer full-rank swaps: max logits rel err {worst:.1e} (tol 1e-3); realized params == plan"))
}

fn flop_model() -> Outcome {
    let opts = BenchOptions { runs: 3, warmup: 1 };
    for &(d1, d2) in &[(64, 256), (384, 128), (100, 37)] {
        let ranks: Vec<usize> = (1..=d1.min(d2)).step_by(7).collect();
        let report = bench_layer((d1, d2), &ranks, 8, opts, 0).map_err(e)?;
        for row in &report.rows[1..] {
            let r = row.rank.unwrap();
            let exact = (r * (d1 + d2)) as f64 / (d1 * d2) as f64;
            check(row.flops_ratio == exact && row.flops_ratio == flops_ratio(d1, d2, r), || {
                format!("{d1}x{d2} r={r}: flops_ratio {} vs {exact}", row.flops_ratio)
            })?;
        }
    }
    check(flops_ratio(6144, 24576, 4915) < 1.0 && flops_ratio(6144, 24576, 4916) > 1.0, || "crossover not at parity rank 4915".into())?;

    let (d1, d2) = (6144, 1536);
    let r = parity_rank(d1, d2) / 2;
    let report = bench_layer((d1, d2), &[r], 256, BenchOptions::default(), 1).map_err(e)?;
    let row = &report.rows[1];
    let soft = if row.rel_time < 1.0 {
        "faster than dense".to_string()
    } else {
        "WARNING: slower than dense in this environment".to_string()
    };
    Ok(format!(
        "flops_ratio exact; 6144x1536 r={r} (half parity), n=256, 10 runs + 3 warm-up: rel_time {:.3}, flops_ratio {:.3}, {soft}",
        row.rel_time, row.flops_ratio
    ))
}

fn round_trips() -> Outcome {
    let arch = ArchDescriptor::builtin("toy-64").unwrap();
    let model = synth_model(&arch, 2, Init::SpectralDecay(2.0)).map_err(e)?;
    let mut policy = Policy::new(vec![LayerKind::AttnQkv, LayerKind::MlpDown], RankSpec::Fixed(16));
    policy.method = Method::Svd;
    let plan = build_plan(&arch, &policy).map_err(e)?;
    let factored = apply_plan(&model, &plan, None, AfmOptions::default()).map_err(e)?;
    for m in [&model, &factored] {
        let bytes = io::model_to_bytes(m);
        let back = io::model_from_bytes(&bytes).map_err(e)?;
        check(&back == m && io::model_to_bytes(&back) == bytes, || "model round trip differs".into())?;
    }
    let corpus = sample_corpus(&model, 2, 64, 1).map_err(e)?;
    let names: Vec<String> = plan.entries.iter().map(|x| x.target.clone()).collect();
    let cap = calibrate(&model, &corpus, &names, None).map_err(e)?;
    let sbytes = io::stats_to_bytes(&cap);
    check(io::stats_to_bytes(&io::stats_from_bytes(&sbytes).map_err(e)?) == sbytes, || "stats round trip differs".into())?;
    check(io::plan_from_json(&io::plan_to_json(&plan)).map_err(e)? == plan, || "plan round trip differs".into())?;

    let bytes = io::model_to_bytes(&model);
    let mut bad_magic = bytes.clone();
    bad_magic[3] ^= 0xff;
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let text = String::from_utf8(bytes[16..16 + header_len].to_vec()).unwrap();
    let mut versioned = bytes.clone();
    let at = 16 + text.find("\"format_version\":1").unwrap() + "\"format_version\":".len();
    versioned[at] = b'9';
    let cases: [(&str, &[u8], fn(&LordError) -> bool); 3] = [
        ("bad magic", &bad_magic, |x| matches!(x, LordError::Format(_))),
        ("truncated", &bytes[..bytes.len() - 100], |x| matches!(x, LordError::Corruption { .. })),
        ("version", &versioned, |x| matches!(x, LordError::Version { found: 9, .. })),
    ];
    for (label, data, expected) in cases {
        match io::model_from_bytes(data) {
            Err(err) if expected(&err) && err.class() == ErrorClass::Format => {}
            other => return Err(format!("{label}: unexpected {other:?}")),
        }
    }
    Ok("model, factored model, stats, plan byte/field identical; bad magic, truncation, version → exit-2 errors".into())
}

fn cli_smoke() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let dir = tmp.path();
    let run = |args: &[&str]| -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_lord"))
            .args(args)
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(e)?;
        if !out.status.success() {
            return Err(format!("`lord {}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    };
    run(&["synth-model", "--arch", "toy-64", "--seed", "1", "-o", "m.lordmdl"])?;
    run(&["synth-corpus", "--vocab", "256", "--tokens", "16384", "--seed", "1", "-o", "c.lordtok"])?;
    run(&["plan", "m.lordmdl", "--targets", "mlp_down,attn_qkv", "--rank", "32", "-o", "plan.json"])?;
    run(&["calibrate", "m.lordmdl", "c.lordtok", "--plan", "plan.json", "-o", "s.lordsta"])?;
    run(&["decompose", "m.lordmdl", "--plan", "plan.json", "--stats", "s.lordsta", "-o", "f.lordmdl"])?;
    let out = run(&["eval-ppl", "f.lordmdl", "c.lordtok"])?;
    let ppl: f64 = out
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("perplexity="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no perplexity in `{out}`"))?;
    check(ppl.is_finite() && ppl > 1.0, || format!("perplexity {ppl}"))?;
    run(&["sweep", "m.lordmdl", "c.lordtok", "--targets", "mlp_down", "--ranks", "16,32,64", "-o", "sweep.csv"])?;
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).map_err(e)?;
    let lines: Vec<&str> = csv.lines().collect();
    check(lines.first() == Some(&"rank,pct_rank_reduction,params_after,pct_param_change,perplexity"), || {
        format!("sweep header `{:?}`", lines.first())
    })?;
    check(lines.len() == 4, || format!("{} sweep rows", lines.len() - 1))?;
    for l in &lines[1..] {
        let cols: Vec<&str> = l.split(',').collect();
        let ok = cols.len() == 5 && cols[4].parse::<f64>().is_ok_and(f64::is_finite);
        check(ok, || format!("bad sweep row `{l}`"))?;
    }
    Ok(format!("synth-model → synth-corpus → plan → calibrate → decompose → eval-ppl (ppl {ppl:.3}) → sweep (3 rows) all exit 0"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 11] = [
        ("model-size accounting at published ranks", Duration::from_secs(1), plan_totals),
        ("parity algebra", Duration::from_secs(1), parity_algebra),
        ("Eckart-Young optimality", Duration::from_secs(30), eckart_young),
        ("AFM exact-subspace recovery", Duration::from_secs(10), afm_recovery),
        ("group/stack equivalence", Duration::from_secs(10), group_equivalence),
        ("statistics correctness", Duration::from_secs(30), statistics),
        ("toy perplexity trend", Duration::from_secs(120), perplexity_trend),
        ("forward equivalence", Duration::from_secs(30), forward_equivalence),
        ("flop-model benchmark", Duration::from_secs(60), flop_model),
        ("format round-trips", Duration::from_secs(10), round_trips),
        ("end-to-end CLI smoke", Duration::from_secs(60), cli_smoke),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if took <= *budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("over time budget; {d}")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} [{:>2}] {name} ({:.2}s / {}s): {detail}", i + 1, took.as_secs_f64(), budget.as_secs());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
