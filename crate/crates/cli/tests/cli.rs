use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fakenews"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn succeed(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn gen_corpus(dir: &Path, name: &str, n: &str, signal: &str, seed: &str) -> PathBuf {
    ok(dir, &["gen", "--n", n, "--fake-fraction", "0.5", "--signal", signal, "--seed", seed, "--out", name]);
    dir.join(name)
}

#[test]
fn gen_writes_requested_corpus() {
    let tmp = TempDir::new().unwrap();
    let summary = ok(tmp.path(), &["gen", "--n", "100", "--fake-fraction", "0.5", "--seed", "1", "--out", "c.jsonl"]);
    assert_eq!(summary["n_articles"], 100);
    let text = fs::read_to_string(tmp.path().join("c.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 100);
    assert_eq!(lines.iter().filter(|l| l["label"] == 1).count(), 50);
}

#[test]
fn gen_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = fs::read(gen_corpus(tmp.path(), "a.jsonl", "80", "0.7", "4")).unwrap();
    let b = fs::read(gen_corpus(tmp.path(), "b.jsonl", "80", "0.7", "4")).unwrap();
    let c = fs::read(gen_corpus(tmp.path(), "c.jsonl", "80", "0.7", "5")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn train_then_eval_on_strong_signal() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_corpus(d, "c.jsonl", "400", "1.0", "2");
    let before = fs::read(d.join("c.jsonl")).unwrap();
    let t = ok(d, &["train", "--corpus", "c.jsonl", "--model", "svm", "--features", "hybrid", "--out", "m.json", "--seed", "3"]);
    assert_eq!(t["training"]["n_train"], 320);
    let report = ok(d, &["eval", "--model", "m.json", "--corpus", "c.jsonl"]);
    assert_eq!(report["n_evaluated"], 80, "evaluates the held-out rows");
    assert!(report["macro_f1"].as_f64().unwrap() >= 0.95, "{report}");
    assert_eq!(report["split_fingerprint"], t["training"]["fingerprint"]);
    let all = ok(d, &["eval", "--model", "m.json", "--corpus", "c.jsonl", "--split", "all"]);
    assert_eq!(all["n_evaluated"], 400);
    assert_eq!(fs::read(d.join("c.jsonl")).unwrap(), before, "input corpus untouched");
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_corpus(d, "c.jsonl", "200", "0.8", "6");
    for (out, threads) in [("a.json", "1"), ("b.json", "1"), ("c.json", "3")] {
        succeed(d, &["train", "--corpus", "c.jsonl", "--model", "rforest", "--out", out, "--seed", "8", "--threads", threads, "--quiet"]);
    }
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    assert_eq!(a, fs::read(d.join("c.json")).unwrap());
}

#[test]
fn quiet_suppresses_stdout() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["gen", "--n", "20", "--out", "c.jsonl", "--quiet"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn external_scores_from_gold_labels() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let corpus = gen_corpus(d, "c.jsonl", "60", "0.5", "1");
    let scores: String = fs::read_to_string(corpus)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            format!("{{\"article_id\":{},\"p_fake\":{}}}\n", v["id"], v["label"])
        })
        .collect();
    fs::write(d.join("s.jsonl"), scores).unwrap();
    let report = ok(d, &["eval", "--corpus", "c.jsonl", "--external-scores", "s.jsonl"]);
    assert_eq!(report["macro_f1"], 1.0);
    assert_eq!(report["n_evaluated"], 60);
}

#[test]
fn compare_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_corpus(d, "c.jsonl", "200", "0.8", "3");
    for out in ["r1.json", "r2.json"] {
        ok(d, &["compare", "--corpus", "c.jsonl", "--models", "nb,logreg,dtree", "--out", out, "--text", "t.txt", "--seed", "5"]);
    }
    let r1 = fs::read(d.join("r1.json")).unwrap();
    assert_eq!(r1, fs::read(d.join("r2.json")).unwrap());
    let table: Value = serde_json::from_slice(&r1).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let f1: Vec<f64> = rows.iter().map(|r| r["report"]["macro_f1"].as_f64().unwrap()).collect();
    assert!(f1.windows(2).all(|w| w[0] >= w[1]), "sorted by macro-F1: {f1:?}");
    assert!(fs::read_to_string(d.join("t.txt")).unwrap().contains("logreg"));
}

#[test]
fn explain_renders_every_format() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_corpus(d, "c.jsonl", "200", "1.0", "9");
    succeed(d, &["train", "--corpus", "c.jsonl", "--model", "logreg", "--out", "m.json", "--quiet"]);
    let id = "a00001";
    let e = ok(d, &["explain", "--model", "m.json", "--corpus", "c.jsonl", "--article-id", id, "--format", "json", "--out", "e.json", "--samples", "200"]);
    assert_eq!(e["article_id"], id);
    assert!(e["tokens"].as_array().unwrap().len() <= 6);
    let again: Value = serde_json::from_slice(&fs::read(d.join("e.json")).unwrap()).unwrap();
    assert_eq!(again, e);

    ok(d, &["explain", "--model", "m.json", "--corpus", "c.jsonl", "--article-id", id, "--format", "html", "--out", "e.html", "--samples", "200"]);
    let html = fs::read_to_string(d.join("e.html")).unwrap();
    assert!(html.starts_with("<!DOCTYPE html>") && html.contains("<mark"));

    ok(d, &["explain", "--model", "m.json", "--corpus", "c.jsonl", "--article-id", id, "--format", "text", "--out", "e.txt", "--samples", "200"]);
    assert!(fs::read_to_string(d.join("e.txt")).unwrap().contains("direction"));
}

#[test]
fn missing_article_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_corpus(d, "c.jsonl", "60", "1.0", "1");
    succeed(d, &["train", "--corpus", "c.jsonl", "--model", "nb", "--out", "m.json", "--quiet"]);
    let out = run(d, &["explain", "--model", "m.json", "--corpus", "c.jsonl", "--article-id", "missing", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("article not found"));
    assert!(!d.join("e.json").exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    for args in [
        vec!["bogus"],
        vec!["gen", "--n", "10", "--out", "c.jsonl", "--frobnicate"],
        vec!["train", "--corpus", "nope.jsonl", "--model", "svm", "--out", "m.json"],
        vec!["gen", "--n", "2", "--out", "c.jsonl"],
        vec!["gen", "--n", "10", "--out", "no/such/dir/c.jsonl"],
    ] {
        let out = run(d, &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    gen_corpus(d, "c.jsonl", "40", "1.0", "1");
    let out = run(d, &["train", "--corpus", "c.jsonl", "--model", "xgboost", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model kind"));
    fs::write(d.join("bad.json"), "{\"format_version\": 99}").unwrap();
    let out = run(d, &["eval", "--model", "bad.json", "--corpus", "c.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_test_split_requires_matching_corpus() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_corpus(d, "a.jsonl", "60", "1.0", "1");
    gen_corpus(d, "b.jsonl", "60", "1.0", "2");
    succeed(d, &["train", "--corpus", "a.jsonl", "--model", "nb", "--out", "m.json", "--quiet"]);
    let out = run(d, &["eval", "--model", "m.json", "--corpus", "b.jsonl", "--split", "test"]);
    assert_eq!(out.status.code(), Some(1));
    let report = ok(d, &["eval", "--model", "m.json", "--corpus", "b.jsonl"]);
    assert_eq!(report["n_evaluated"], 60);
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen", "train", "eval", "compare", "explain"] {
        assert!(text.contains(sub));
    }
}
