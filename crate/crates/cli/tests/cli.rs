use std::path::Path;
use std::process::{Command, Output};

fn lord(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lord"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lord(dir, args);
    assert!(
        out.status.success(),
        "lord {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    lord(dir, args).status.code().expect("exit code")
}

fn field(stdout: &str, key: &str) -> f64 {
    stdout
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
        .parse()
        .unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth-model", "--arch", "toy-64", "--seed", "3", "-o", "m.lordmdl"]);
    ok(d, &["synth-corpus", "--from-model", "m.lordmdl", "--tokens", "2048", "--seq-len", "128", "--seed", "1", "-o", "calib.lordtok"]);
    ok(d, &["synth-corpus", "--vocab", "256", "--tokens", "4096", "--seed", "2", "-o", "zipf.lordtok"]);

    let plan = ok(d, &["plan", "m.lordmdl", "--targets", "mlp_down,attn_qkv", "--rank", "32", "-o", "plan.json"]);
    assert_eq!(field(&plan, "entries"), 4.0);
    assert!(field(&plan, "pct_param_change") < 0.0);

    ok(d, &["calibrate", "m.lordmdl", "calib.lordtok", "--plan", "plan.json", "-o", "s.lordsta"]);
    ok(d, &["decompose", "m.lordmdl", "--plan", "plan.json", "--stats", "s.lordsta", "-o", "f.lordmdl"]);

    let dense = ok(d, &["eval-ppl", "m.lordmdl", "calib.lordtok", "--seq-len", "128"]);
    let fact = ok(d, &["eval-ppl", "f.lordmdl", "calib.lordtok", "--seq-len", "128", "--csv", "ppl.csv"]);
    let (p0, p1) = (field(&dense, "perplexity"), field(&fact, "perplexity"));
    assert!(p0.is_finite() && p1.is_finite() && p0 > 1.0);
    assert_eq!(field(&fact, "scored_tokens"), field(&dense, "scored_tokens"));
    assert!(std::fs::read_to_string(d.join("ppl.csv")).unwrap().lines().count() == 2);

    let inspect = ok(d, &["inspect", "f.lordmdl"]);
    assert!(inspect.contains("h.0.mlp_down") && inspect.contains("rank 32"));

    ok(d, &["sweep", "m.lordmdl", "zipf.lordtok", "--calib", "calib.lordtok", "--targets", "mlp_down", "--ranks", "16,64", "--seq-len", "64", "-o", "sweep.csv"]);
    let text = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["rank", "pct_rank_reduction", "params_after", "pct_param_change", "perplexity"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r[4].parse::<f64>().unwrap().is_finite());
    }

    ok(d, &["bench", "m.lordmdl", "--seq-lens", "32", "--runs", "2", "--warmup", "1", "--ranks", "16", "--targets", "mlp_down", "-o", "bench.csv"]);
    let bench = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert!(bench.starts_with("target,d1,d2,rank,seq_len,runs,warmup,mean_s,median_s,stddev_s,params,rel_time,flops_ratio,pow2_divisor\n"));
    assert!(d.join("bench.json").exists());
}

#[test]
fn svd_plan_needs_no_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth-model", "--arch", "toy-swiglu", "-o", "m.lordmdl"]);
    ok(d, &["plan", "toy-swiglu", "--targets", "mlp_gate", "--rank-reduction", "25%", "--multiple", "16", "--method", "svd", "-o", "p.json"]);
    ok(d, &["decompose", "m.lordmdl", "--plan", "p.json", "-o", "f.lordmdl"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["--version"]), 0);
    assert_eq!(code(d, &["frobnicate"]), 1);
    assert_eq!(code(d, &["plan", "toy-64", "-o", "p.json"]), 1);
    assert_eq!(code(d, &["inspect", "nope.lordmdl"]), 1);
    assert_eq!(code(d, &["eval-ppl", "nope.lordmdl", "nope.lordtok"]), 2);

    // Square attention output alone is skipped by policy.
    assert_eq!(code(d, &["plan", "toy-64", "--targets", "attn_out", "--rank", "8", "-o", "p.json"]), 1);
    assert_eq!(code(d, &["plan", "toy-64", "--targets", "embedding", "--rank", "8", "-o", "p.json"]), 1);

    ok(d, &["synth-model", "--arch", "toy-64", "-o", "m.lordmdl"]);
    ok(d, &["plan", "toy-64", "--targets", "mlp_down", "--rank", "16", "-o", "p.json"]);
    assert_eq!(code(d, &["decompose", "m.lordmdl", "--plan", "p.json", "-o", "f.lordmdl"]), 3);

    let bytes = std::fs::read(d.join("m.lordmdl")).unwrap();
    std::fs::write(d.join("cut.lordmdl"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(d, &["decompose", "cut.lordmdl", "--plan", "p.json", "-o", "f.lordmdl"]), 2);

    ok(d, &["plan", "toy-128", "--targets", "mlp_down", "--rank", "16", "--method", "svd", "-o", "other.json"]);
    assert_eq!(code(d, &["decompose", "m.lordmdl", "--plan", "other.json", "-o", "f.lordmdl"]), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_lord"))
        .args(["inspect", "toy-64"])
        .env("LORD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inspect_builtin_arch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["inspect", "codegen-16b"]);
    assert!(out.contains("18432x6144"));
    assert!(out.contains("0.3333"));
}
