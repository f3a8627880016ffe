use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_pdsel");

fn pdsel(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = pdsel(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn small_corpus(dir: &Path) {
    ok(dir, &["synth", "--n-prompts", "400", "--synth-seed", "9"]);
}

const OUTPUTS: [&str; 7] = [
    "models/rm-0.json",
    "models/rm-1.json",
    "models/rm-2.json",
    "models/rm-3.json",
    "pd_table.jsonl",
    "subset.jsonl",
    "selection.json",
];

#[test]
fn run_equals_stage_composition() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        small_corpus(d);
    }
    let report = ok(
        a.path(),
        &["run", "--rho", "0.001", "--strategy", "RAND", "--seed", "5"],
    );
    assert_eq!(report["status"], "ok");
    for stage in ["validate", "train-rm", "score", "select"] {
        ok(
            b.path(),
            &[stage, "--rho", "0.001", "--strategy", "RAND", "--seed", "5"],
        );
    }
    for f in OUTPUTS {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert_eq!(report["selection"]["selected"], 120);
    assert_eq!(report["outputs"].as_array().unwrap().len(), 7);
}

#[test]
fn select_writes_a_loadable_subset() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    ok(d.path(), &["run", "--lambda", "1"]);
    let full = ok(d.path(), &["validate"]);
    let subset = ok(
        d.path(),
        &["validate", "--dataset", "subset.jsonl", "--subset", "unused.jsonl"],
    );
    assert_eq!(full["total_pairs"], subset["total_pairs"]);
    let selection: Value = serde_json::from_str(&fs::read_to_string(d.path().join("selection.json")).unwrap()).unwrap();
    assert_eq!(selection["selected_ids"].as_array().unwrap().len(), 400);
    let header = fs::read_to_string(d.path().join("subset.jsonl")).unwrap();
    assert!(!header.lines().next().unwrap().contains("synth_config"));
}

#[test]
fn loss_and_bounds_stages() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    ok(d.path(), &["run"]);
    let loss = ok(d.path(), &["eval-loss"]);
    assert_eq!(loss["records"], 400);
    let bounds = ok(d.path(), &["bounds"]);
    let (lo, m, hi) = (
        bounds["lower"].as_f64().unwrap(),
        bounds["measured"].as_f64().unwrap(),
        bounds["upper"].as_f64().unwrap(),
    );
    assert!(lo - 1e-9 <= m && m <= hi + 1e-9);
    assert_eq!(m, loss["dmpo_with_pd"].as_f64().unwrap());
    assert!(bounds["params"]["c1"].as_f64().unwrap() <= bounds["params"]["c2"].as_f64().unwrap());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| pdsel(d.path(), args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["run", "--lambda", "0"]), 1);
    assert_eq!(code(&["run", "--threads", "0"]), 1);
    assert_eq!(code(&["run", "--strategy", "TOP"]), 1);
    assert_eq!(code(&["validate", "--config", "missing.json"]), 1);
    fs::write(d.path().join("typo.json"), r#"{"lamda": 0.2}"#).unwrap();
    assert_eq!(code(&["validate", "--config", "typo.json"]), 1);
    assert_eq!(
        code(&[
            "synth",
            "--kappa",
            "1",
            "--feature-dim",
            "1",
            "--conflict-target",
            "0.2"
        ]),
        1
    );
    assert_eq!(code(&["validate"]), 2);
    fs::write(d.path().join("corpus.jsonl"), "").unwrap();
    assert_eq!(code(&["validate"]), 2);
    assert_eq!(code(&["verify-theory", "--trials", "200", "--instances", "5"]), 0);
}

#[test]
fn failed_run_flags_partial_outputs() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    fs::create_dir(d.path().join("blocker")).unwrap();
    let out = pdsel(d.path(), &["run", "--table", "blocker"]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["status"], "failed");
    assert_eq!(report["error"]["stage"], "score");
    assert_eq!(report["partial_outputs"], true);
    assert_eq!(report["outputs"].as_array().unwrap().len(), 4);

    let e = tempfile::tempdir().unwrap();
    let out = pdsel(e.path(), &["run"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        (report["error"]["stage"].as_str(), report["partial_outputs"].as_bool()),
        (Some("validate"), Some(false))
    );
}

#[test]
fn single_aspect_run_warns_and_keeps_id_order() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "synth",
            "--kappa",
            "1",
            "--feature-dim",
            "1",
            "--conflict-target",
            "0",
            "--n-prompts",
            "50",
        ],
    );
    let report = ok(d.path(), &["run", "--lambda", "0.2"]);
    assert!(report["warnings"][0].as_str().unwrap().contains("kappa = 1"));
    let selection: Value = serde_json::from_str(&fs::read_to_string(d.path().join("selection.json")).unwrap()).unwrap();
    let ids: Vec<&str> = selection["selected_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids.len(), 10);
    assert_eq!(ids, sorted);
    assert_eq!(ids[0], "pair-000000");
}

#[test]
fn synth_is_byte_deterministic_and_reports_to_file() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n-prompts", "100", "--dataset", "a.jsonl"]);
    let out = pdsel(
        d.path(),
        &["synth", "--n-prompts", "100", "--dataset", "b.jsonl", "--out", "r.json"],
    );
    assert!(out.status.success() && out.stdout.is_empty());
    assert_eq!(
        fs::read(d.path().join("a.jsonl")).unwrap(),
        fs::read(d.path().join("b.jsonl")).unwrap()
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(d.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["pairs"], 100);
}
