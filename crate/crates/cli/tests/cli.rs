use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sgid(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgid"))
        .current_dir(cwd)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().expect("summary line");
    serde_json::from_str(last).expect("summary is JSON")
}

fn synthetic(dir: &Path) {
    let out = sgid(dir, &["make-synthetic", "data", "--per-label", "3", "--size", "16", "--out-dir", "."]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut all = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            all.push(p);
        }
    }
    all.sort();
    all
}

#[test]
fn augment_twice_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    for name in ["a", "b"] {
        let out = sgid(dir.path(), &["augment", "--dataset", "dataset.json", "--seed", "7", "--out-dir", name]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(summary(&out)["status"], "ok");
    }
    let a = fs::read(dir.path().join("a/manifest.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b/manifest.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    fs::write(
        dir.path().join("c.json"),
        r#"{"dataset_manifest": "dataset.json", "k_augment": 2, "out_dir": "from_config"}"#,
    )
    .unwrap();
    let out = sgid(dir.path(), &["augment", "--config", "c.json", "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let m = fs::read_to_string(dir.path().join("from_config/manifest.jsonl")).unwrap();
    assert_eq!(m.lines().count(), 1 + 9 * 2);
}

#[test]
fn filter_writes_copy_and_report() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    assert!(sgid(dir.path(), &["augment", "--dataset", "dataset.json", "--out-dir", "aug"]).status.success());
    let original = fs::read(dir.path().join("aug/manifest.jsonl")).unwrap();
    let out = sgid(dir.path(), &["filter", "--kind", "prompt", "--manifest", "aug/manifest.jsonl"]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["kept"].as_u64().unwrap() + s["dropped"].as_u64().unwrap(), 9);
    assert_eq!(fs::read(dir.path().join("aug/manifest.jsonl")).unwrap(), original);
    let filtered = fs::read_to_string(dir.path().join("aug/manifest.prompt.jsonl")).unwrap();
    assert!(filtered.contains("\"kept\"") || filtered.contains("\"dropped\""));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("aug/filter_prompt.json")).unwrap()).unwrap();
    assert_eq!(report["decisions"].as_array().unwrap().len(), 9);
}

#[test]
fn prompt_mode_none_gives_empty_prompts() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let out = sgid(
        dir.path(),
        &["augment", "--dataset", "dataset.json", "--prompt-mode", "none", "--out-dir", "none"],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("none/manifest.jsonl")).unwrap();
    let records: Vec<Value> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 9);
    for r in records {
        assert_eq!(r["request"]["prompt"]["rendered_text"], "");
    }
}

#[test]
fn dry_run_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let before = files(dir.path());
    for args in [
        vec!["augment", "--dataset", "dataset.json", "--out-dir", "dry", "--dry-run"],
        vec!["baseline", "--dataset", "dataset.json", "--out-dir", "dry", "--dry-run"],
        vec!["caption", "--dataset", "dataset.json", "--out-dir", "dry", "--dry-run"],
        vec!["scan", "data", "--out-dir", "dry", "--dry-run"],
    ] {
        let out = sgid(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert_eq!(summary(&out)["dry_run"], true);
    }
    assert_eq!(files(dir.path()), before);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let out = sgid(dir.path(), &["augment", "--dataset", "dataset.json", "--backend.caption=missing"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&out)["status"], "invalid");
    let out = sgid(dir.path(), &["augment", "--dataset", "dataset.json", "--noise-rate", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(dir.path().join("bad.json"), r#"{"no_such_field": 1}"#).unwrap();
    let out = sgid(dir.path(), &["augment", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn baseline_and_evaluation_commands() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let d = dir.path();
    assert!(sgid(d, &["augment", "--dataset", "dataset.json", "--out-dir", "aug"]).status.success());
    let out = sgid(d, &["baseline", "--method", "cutmix", "--dataset", "dataset.json", "--out-dir", "cm"]);
    assert_eq!(out.status.code(), Some(0));
    let out = sgid(d, &["eval-similarity", "--manifest", "aug/manifest.jsonl", "--out-dir", "eval"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(d.join("eval/similarity_sgid.csv").exists());
    let out = sgid(
        d,
        &["grid", "--column", "sgid=aug/manifest.jsonl", "--column", "cutmix=cm/manifest.jsonl", "--out-dir", "eval"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(&out)["layout"]["cols"], 3);
    let out = sgid(d, &["compare", "--entry", "base=", "--entry", "sgid=aug/manifest.jsonl", "--out-dir", "eval"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(&out)["rows"].as_array().unwrap().len(), 2);
}
