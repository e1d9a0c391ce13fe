use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn iou(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iou"))
        .arg("--store")
        .arg(format!("dir:{}", dir.display()))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = iou(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fig1() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fig1.txt"), "hello world\nhello airphant\n").unwrap();
    dir
}

/// Zeroes wall-clock fields, which vary between runs.
fn strip_timings(mut v: Value) -> Value {
    if let Some(t) = v.get_mut("timings").and_then(Value::as_object_mut) {
        for x in t.values_mut() {
            *x = Value::from(0.0);
        }
    }
    v
}

/// Compares against `tests/golden/<name>`; `IOU_BLESS=1` rewrites the file.
fn assert_golden(name: &str, actual: &Value) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    let text = serde_json::to_string_pretty(actual).unwrap() + "\n";
    if std::env::var_os("IOU_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(text, expected, "{name} differs from the golden file");
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn fig1_build_search_inspect() {
    let dir = fig1();
    let p = dir.path();
    let report = json(&ok(p, &["--json", "build", "fig1", "fig1.txt", "--bins", "100", "--timestamp", "1700000000"]));
    assert_golden("build_fig1.json", &report);

    let plain = ok(p, &["search", "fig1", "airphant"]);
    assert_eq!(plain, "fig1.txt\t12\t14\thello airphant\n");

    let search = strip_timings(json(&ok(p, &["--json", "search", "fig1", "hello"])));
    assert_golden("search_fig1.json", &search);

    let inspect = json(&ok(p, &["--json", "inspect", "fig1"]));
    assert_golden("inspect_fig1.json", &inspect);
    assert!(ok(p, &["inspect", "fig1"]).contains("corpus_id: fig1\n"));
}

#[test]
fn json_output_is_stable_across_runs() {
    let a = fig1();
    let b = fig1();
    let args = ["--json", "build", "fig1", "fig1.txt", "--bins", "500", "--seed", "3"];
    assert_eq!(ok(a.path(), &args), ok(b.path(), &args));
    for p in [a.path(), b.path()] {
        assert!(p.join("fig1.iou.header").exists());
    }
    assert_eq!(
        std::fs::read(a.path().join("fig1.iou.header")).unwrap(),
        std::fs::read(b.path().join("fig1.iou.header")).unwrap()
    );
}

#[test]
fn boolean_and_topk_queries() {
    let dir = fig1();
    let p = dir.path();
    ok(p, &["build", "fig1", "fig1.txt", "--bins", "100"]);
    let r = json(&ok(p, &["--json", "search", "fig1", "--expr", "world | airphant"]));
    assert_eq!(r["matches"].as_array().unwrap().len(), 2);
    assert_eq!(r["query"]["clauses"], serde_json::json!([["world"], ["airphant"]]));

    let r = json(&ok(p, &["--json", "search", "fig1", "hello", "--top-k", "1", "--no-content"]));
    assert!(!r["matches"].as_array().unwrap().is_empty());
    assert_eq!(r["top_k"]["k"], 1);
    assert!(r["matches"][0].get("content").is_none());

    let r = json(&ok(p, &["--json", "search", "fig1", "absent"]));
    assert_eq!(r["matches"], serde_json::json!([]));
}

#[test]
fn infeasible_budget_exits_3_with_the_bound() {
    let dir = fig1();
    let out = iou(dir.path(), &["build", "fig1", "fig1.txt", "--bins", "10", "--f0", "1e-9"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("lower bound 0.06"), "{err}");
}

#[test]
fn other_errors_exit_1() {
    let dir = fig1();
    let out = iou(dir.path(), &["search", "missing", "hello"]);
    assert_eq!(out.status.code(), Some(1));
    let out = iou(dir.path(), &["build", "x", "nope.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn profile_of_diag_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(ok(p, &["gen", "d", "--kind", "diag", "--log10", "3,3,0"]), "d/part-00000.txt\n");
    let prof = json(&ok(p, &["--json", "profile", "d/part-00000.txt"]));
    assert_eq!(prof["n"], 1000);
    assert!((prof["sigma_x"].as_f64().unwrap() - 1.0).abs() <= 0.01);
    assert_golden("profile_diag.json", &prof);
}

#[test]
fn memory_limit_bounds_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "z", "--log10", "3,3,1", "--docs-per-blob", "250"]);
    let sources: Vec<String> = (0..4).map(|k| format!("z/part-{k:05}.txt")).collect();
    let mut args = vec!["--json", "build", "z"];
    args.extend(sources.iter().map(String::as_str));
    args.extend(["--memory-limit", "200000", "--hedge-extra", "1", "--f0", "10"]);
    let r = json(&ok(p, &args));
    assert!(r["header_bytes"].as_u64().unwrap() <= 200_000, "{r}");
    assert!(r["total_bins"].as_u64().unwrap() > 1000, "{r}");
}

#[test]
fn simulated_store_from_config_file() {
    let dir = fig1();
    let p = dir.path();
    ok(p, &["build", "fig1", "fig1.txt", "--bins", "100"]);
    let conf = p.join("sim.toml");
    std::fs::write(&conf, "root = \".\"\n[latency]\nbase_ms = 20.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_iou"))
        .args(["--store", &format!("sim:{}", conf.display()), "--json", "search", "fig1", "airphant"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["matches"][0]["offset"], 12);
    assert!(r["timings"]["lookup_ms"].as_f64().unwrap() >= 20.0);
}

#[test]
fn bench_writes_csv_with_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fp.csv");
    ok(dir.path(), &["bench", "fp", "--log10", "2,2,1", "--bins", "500", "--layers", "1,2", "--out", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kind,B,L,fp_observed,fp_expected,sigma_x,epsilon"));
    assert_eq!(lines.count(), 2);

    let csv = ok(dir.path(), &["bench", "lookup", "--log10", "2,2,1", "--layers", "2", "--base-ms", "1", "--queries", "2"]);
    let header = csv.lines().next().unwrap();
    for col in ["kind", "B", "L", "lookup_ms_mean", "lookup_ms_p99", "doc_ms_mean"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
}
