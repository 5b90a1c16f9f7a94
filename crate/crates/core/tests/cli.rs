mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fixture, metric_fixture};
use veritopic::pipeline::{evaluate, load_corpus, EvalReport};

fn veritopic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_veritopic"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = veritopic(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_exits_with_usage() {
    let out = veritopic(&["eval", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn training_subcommands_require_a_seed() {
    for args in [
        ["train", "--corpus", "x", "--topics", "y", "--out", "z"],
        ["lda-train", "--corpus", "x", "--topics", "3", "--out", "z"],
        ["rank-train", "--corpus", "x", "--epochs", "1", "--out", "z"],
    ] {
        let cmd = args[0];
        let out = veritopic(&args);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"), "{cmd}");
    }
}

#[test]
fn eval_reports_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let pred = fixture("metric_pred.jsonl");
    let gold = fixture("metric_gold.jsonl");
    let table = ok(&["eval", "--predictions", s(&pred), "--gold", s(&gold), "--json", s(&json)]);
    assert!(table.contains("label accuracy  0.8000"), "{table}");
    assert!(table.contains("FEVER score     0.6000"), "{table}");
    let written: EvalReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let (p, g) = metric_fixture();
    assert_eq!(written, evaluate(&p, &g).unwrap());

    let both = ok(&["eval", "--predictions", s(&pred), "--gold", s(&gold)]);
    let start = both.find('{').unwrap();
    let inline: EvalReport = serde_json::from_str(&both[start..]).unwrap();
    assert_eq!(inline, written);
}

#[test]
fn eval_lists_missing_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("p.jsonl");
    std::fs::write(&pred, "{\"id\":\"c1\",\"label\":\"SUPPORTS\"}\n").unwrap();
    let out = veritopic(&["eval", "--predictions", s(&pred), "--gold", s(&fixture("metric_gold.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing: [c2, c3, c4, c5]"), "{err}");
}

#[test]
fn synthetic_data_loads_and_trains_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["gen-synthetic", "--topics", "3", "--train", "12", "--test", "6", "--seed", "4", "--out", s(&data)]);
    let train = data.join("train.jsonl");
    assert_eq!(load_corpus(&train).unwrap().len(), 12);
    assert_eq!(load_corpus(&data.join("test.jsonl")).unwrap().len(), 6);

    let config = d.join("run.toml");
    std::fs::write(&config, "K = 2\nL = 1\nheads = 2\nd = 8\nl = 4\nepochs = 30\n").unwrap();
    let lda = d.join("lda.txt");
    let background = data.join("background.jsonl");
    ok(&[
        "lda-train", "--corpus", s(&train), "--documents", s(&background), "--config", s(&config),
        "--iterations", "20", "--seed", "1", "--out", s(&lda),
    ]);
    let (a, b) = (d.join("a.ckpt"), d.join("b.ckpt"));
    for out in [&a, &b] {
        ok(&[
            "train", "--corpus", s(&train), "--topics", s(&lda), "--config", s(&config), "--epochs", "1",
            "--seed", "7", "--out", s(out),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let pred = d.join("pred.jsonl");
    let test = data.join("test.jsonl");
    ok(&["predict", "--model", s(&a), "--topics", s(&lda), "--corpus", s(&test), "--out", s(&pred)]);
    let table = ok(&["eval", "--predictions", s(&pred), "--gold", s(&test), "--json", s(&d.join("r.json"))]);
    assert!(table.contains("instances       6"));
}

#[test]
fn retrieval_and_ranking_stages_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["gen-synthetic", "--train", "30", "--test", "3", "--seed", "2", "--out", s(&data)]);
    let (docs, index, retrieved) = (data.join("documents.jsonl"), d.join("index.json"), d.join("ret.jsonl"));
    let test = data.join("test.jsonl");
    ok(&["build-index", "--documents", s(&docs), "--out", s(&index)]);
    ok(&["retrieve", "--index", s(&index), "--corpus", s(&test), "--top-k", "2", "--out", s(&retrieved)]);
    let ranker = d.join("ranker.ckpt");
    ok(&["rank-train", "--corpus", s(&data.join("train.jsonl")), "--epochs", "1", "--seed", "3", "--out", s(&ranker)]);
    let ranked = d.join("ranked.jsonl");
    ok(&[
        "rank", "--ranker", s(&ranker), "--corpus", s(&test), "--documents", s(&docs), "--retrieved", s(&retrieved),
        "--out", s(&ranked),
    ]);
    for inst in load_corpus(&ranked).unwrap() {
        assert_eq!(inst.candidates.len(), 5);
    }
}

#[test]
fn grad_check_passes() {
    let out = ok(&["grad-check", "--seed", "2"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("ok")).count(), 4, "{out}");
}
