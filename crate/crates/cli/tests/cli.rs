use std::path::Path;
use std::process::{Command, Output};

use ptg_core::challenge_scoring::{read_pairs, write_pairs, CandidatePair, ScoreTable};
use ptg_core::composer::text_key;
use ptg_core::embedding_store::{save_table, EmbeddingTable, EmbeddingVector, TableFormat};
use serde_json::{json, Value};

fn ptg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptg")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ptg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn v(x: &[f32]) -> EmbeddingVector {
    EmbeddingVector::new(x.to_vec()).unwrap()
}

/// Two well separated groups of reference images, 6 pairs each.
fn corpus(dir: &Path) {
    let mut images = EmbeddingTable::new(3).unwrap();
    let mut texts = EmbeddingTable::new(3).unwrap();
    let mut captions = String::new();
    let mut pairs = Vec::new();
    for i in 0..12 {
        let base = if i < 6 { [5.0, 0.0, 0.0] } else { [0.0, 5.0, 0.0] };
        images.insert(format!("r{i}"), v(&[base[0] + i as f32 * 0.01, base[1], 0.1])).unwrap();
        images.insert(format!("t{i}"), v(&[1.0, i as f32 * 0.3, 0.5])).unwrap();
        let caption = format!("caption {i}");
        texts.insert(text_key(&caption), v(&[0.0, 0.0, 1.0 + i as f32])).unwrap();
        captions.push_str(&format!("{}\n", json!({"id": format!("t{i}"), "caption": caption})));
        pairs.push(CandidatePair::new(format!("p{i:02}"), format!("r{i}"), format!("t{i}")));
    }
    save_table(&images, &dir.join("images.ptge"), TableFormat::Binary).unwrap();
    save_table(&texts, &dir.join("texts.jsonl"), TableFormat::Jsonl).unwrap();
    std::fs::write(dir.join("captions.jsonl"), captions).unwrap();
    write_pairs(&pairs, std::fs::File::create(dir.join("pairs.jsonl")).unwrap()).unwrap();
}

#[test]
fn categorize_score_summarize_select() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    ok(&[
        "categorize", "--pairs", s(&d.join("pairs.jsonl")), "--images", s(&d.join("images.ptge")), "--k", "2",
        "--seed", "1", "--out", s(&d.join("pairs.cat.jsonl")), "--assignment-out", s(&d.join("assign.json")),
    ]);
    let pairs = read_pairs(&d.join("pairs.cat.jsonl")).unwrap();
    assert_eq!(pairs.len(), 12);
    let first = pairs[0].category.clone().unwrap();
    assert!(pairs[..6].iter().all(|p| p.category.as_ref() == Some(&first)));
    assert!(pairs[6..].iter().all(|p| p.category.as_ref() != Some(&first)));
    let assign: Value = serde_json::from_slice(&std::fs::read(d.join("assign.json")).unwrap()).unwrap();
    assert_eq!(assign["method"], "kmeans");
    assert_eq!(assign["labels"].as_object().unwrap().len(), 12);

    let scores = d.join("scores.jsonl");
    ok(&[
        "score", "--pairs", s(&d.join("pairs.cat.jsonl")), "--images", s(&d.join("images.ptge")), "--backend", "toy",
        "--texts", s(&d.join("texts.jsonl")), "--captions", s(&d.join("captions.jsonl")), "--seed", "4", "--out",
        s(&scores),
    ]);
    let table = ScoreTable::load(&scores).unwrap();
    assert_eq!(table.len(), 12);
    assert!(table.scores.iter().all(|r| (0.0..=2.0).contains(&r.score) && r.category.is_some()));
    let meta: Value = serde_json::from_slice(&std::fs::read(d.join("scores.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["mode"], "toy");
    assert_eq!(meta["seed"], 4);

    let summary: Value = serde_json::from_str(&ok(&["summarize", "--scores", s(&scores)])).unwrap();
    assert_eq!(summary["overall"]["count"], 12);
    assert_eq!(summary["categories"].as_object().unwrap().len(), 2);

    let round = d.join("round.json");
    ok(&["select", "--scores", s(&scores), "--strategy", "top-k", "--shots", "2", "--pool-fraction", "0.5", "--out", s(&round)]);
    let r: Value = serde_json::from_slice(&std::fs::read(&round).unwrap()).unwrap();
    assert_eq!(r["categories"].as_object().unwrap().len(), 2);
    assert_eq!(r["pairs"].as_object().unwrap().len(), 4);
}

#[test]
fn strict_scoring_fails_and_lenient_skips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    // drop one caption
    let all = std::fs::read_to_string(d.join("captions.jsonl")).unwrap();
    let kept: String = all.lines().skip(1).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("captions.jsonl"), kept).unwrap();
    let (pairs, images, texts, captions, scores) = (
        d.join("pairs.jsonl"),
        d.join("images.ptge"),
        d.join("texts.jsonl"),
        d.join("captions.jsonl"),
        d.join("scores.jsonl"),
    );
    let base = [
        "score", "--pairs", s(&pairs), "--images", s(&images), "--backend", "toy", "--texts", s(&texts),
        "--captions", s(&captions), "--out", s(&scores),
    ];
    let strict = ptg(&base);
    assert!(!strict.status.success());
    assert!(String::from_utf8_lossy(&strict.stderr).contains("p00"));
    let mut lenient = base.to_vec();
    lenient.push("--lenient");
    ok(&lenient);
    assert_eq!(ScoreTable::load(&d.join("scores.jsonl")).unwrap().len(), 11);
}

#[test]
fn evaluate_single_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut gallery = EmbeddingTable::new(2).unwrap();
    for (id, x) in [("a", [1.0, 0.0]), ("b", [0.0, 1.0]), ("c", [-1.0, 0.0]), ("d", [0.7, 0.7])] {
        gallery.insert(id, v(&x)).unwrap();
    }
    save_table(&gallery, &d.join("g.ptge"), TableFormat::Binary).unwrap();
    let trials = d.join("runs");
    std::fs::create_dir_all(&trials).unwrap();
    let write = |name: &str, target: &str| {
        let q = json!({"query_id": "q", "vec": [1.0, 0.1], "target": target, "exclude_ids": ["c"]});
        std::fs::write(trials.join(name), format!("{q}\n")).unwrap();
    };
    write("t1.jsonl", "a");
    write("t2.jsonl", "d");
    write("t3.jsonl", "b");

    let out = ok(&[
        "evaluate", "--queries", s(&trials.join("t1.jsonl")), "--gallery", s(&d.join("g.ptge")), "--k", "1,2",
        "--out", s(&d.join("single.json")),
    ]);
    assert!(out.contains("R@1: 1.0000"), "{out}");

    ok(&[
        "evaluate", "--trials-dir", s(&trials), "--gallery", s(&d.join("g.ptge")), "--k", "1,2", "--out",
        s(&d.join("report.json")),
    ]);
    let report: Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["trials"].as_object().unwrap().len(), 3);
    let r1 = &report["aggregate"]["scopes"]["overall"]["1"];
    // trials hit at k=1: a yes, d no, b no
    assert!((r1["mean"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let r2 = &report["aggregate"]["scopes"]["overall"]["2"];
    assert!((r2["mean"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r2["trials"], json!([1.0, 1.0, 0.0]));
}

#[test]
fn usage_and_input_errors_exit_nonzero() {
    assert_eq!(ptg(&["select"]).status.code(), Some(2));
    assert_eq!(ptg(&["pseudo-gen", "--images", "/no/such/dir", "--out", "/tmp/x"]).status.code(), Some(1));
    let out = ptg(&["select", "--scores", "/no/such.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
