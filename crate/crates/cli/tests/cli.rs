use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use casemix_core::pipeline::sha256_hex;
use serde_json::Value;
use tempfile::TempDir;

fn casemix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casemix"))
        .args(args)
        .env_remove("CASEMIX_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path to SHA-256 for every file under `root`.
fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

const PIPELINE: &str = r#"{"k": 5, "seeds": {"clustering": 1, "split": 2, "oversample": 3}}"#;

fn cohort(dir: &Path, n: usize) -> PathBuf {
    let cfg = write(dir, &format!("cohort{n}.json"), &format!(r#"{{"n": {n}, "seed": 7}}"#));
    let out = dir.join(format!("cohort{n}.csv"));
    let o = casemix(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn generate_writes_csv_and_manifest() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 50);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("id,age_years,los_days,total_cost,tbsa_pct,theatre_visits"));
    assert_eq!(text.lines().count(), 51);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(t.path().join("cohort50.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seeds"]["cohort"], 7);
    assert_eq!(manifest["outputs"]["cohort50.csv"], sha256_hex(text.as_bytes()));
}

#[test]
fn generate_is_deterministic() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "c.json", r#"{"n": 80, "seed": 3}"#);
    let a = t.path().join("a.csv");
    let b = t.path().join("b.csv");
    assert_eq!(code(&casemix(&["generate", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&casemix(&["--threads", "3", "generate", "--config", s(&cfg), "--out", s(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn missing_or_malformed_config_is_input_error() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("x.csv");
    let o = casemix(&["generate", "--config", s(&t.path().join("nope.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let bad = write(t.path(), "bad.json", "{\"n\": ");
    assert_eq!(code(&casemix(&["generate", "--config", s(&bad), "--out", s(&out)])), 2);
    let neg = write(t.path(), "neg.json", r#"{"n": 0, "seed": 1}"#);
    assert_eq!(code(&casemix(&["generate", "--config", s(&neg), "--out", s(&out)])), 2);
    let o = casemix(&["generate", "--config", s(&neg)]);
    assert_eq!(code(&o), 2, "missing flag");
}

#[test]
fn seeds_required_unless_ephemeral() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "c.json", r#"{"n": 20}"#);
    let out = t.path().join("x.csv");
    let o = casemix(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--ephemeral"), "{}", stderr(&o));
    let o = casemix(&["generate", "--config", s(&cfg), "--out", s(&out), "--ephemeral"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(t.path().join("x.csv.manifest.json")).unwrap()).unwrap();
    assert!(manifest["config"]["seed"].is_u64());
    // the recorded seed reproduces the file
    let again = t.path().join("again.csv");
    let o = casemix(&["replay", "--manifest", s(&t.path().join("x.csv.manifest.json")), "--out", s(&again)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());

    let pcfg = write(t.path(), "p.json", r#"{"k": 5}"#);
    let csv = cohort(t.path(), 60);
    let o = casemix(&["train", "--cohort", s(&csv), "--config", s(&pcfg), "--out", s(&t.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unwritable_output_is_io_error() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "c.json", r#"{"n": 20, "seed": 1}"#);
    let blocker = write(t.path(), "file", "x");
    let o = casemix(&["generate", "--config", s(&cfg), "--out", s(&blocker.join("sub").join("x.csv"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn hrg_labels_every_record() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 120);
    let out = t.path().join("hrg");
    let o = casemix(&["hrg", "--cohort", s(&csv), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let labels = fs::read_to_string(out.join("hrg_labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 121);
    assert_eq!(labels.lines().next(), Some("id,hrg_label"));
    let hist: Value = serde_json::from_str(&fs::read_to_string(out.join("hrg_histogram.json")).unwrap()).unwrap();
    assert_eq!(hist["total"], 120);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn hrg_rejects_non_exhaustive_ruleset() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 20);
    let rs = write(
        t.path(),
        "rs.json",
        r#"{"version": "t", "k": 13, "rules": [{"if": [{"feature": "tbsa_pct", "op": ">=", "value": 19}], "then": 13}]}"#,
    );
    let o = casemix(&["hrg", "--cohort", s(&csv), "--ruleset", s(&rs), "--out", s(&t.path().join("h"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("non-exhaustive"), "{}", stderr(&o));
}

#[test]
fn hrg_on_empty_cohort() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 5);
    let header = fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    let empty = write(t.path(), "empty.csv", &format!("{header}\n"));
    let out = t.path().join("h");
    let o = casemix(&["hrg", "--cohort", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("hrg_labels.csv")).unwrap(), "id,hrg_label\n");
}

#[test]
fn malformed_cohort_is_input_error() {
    let t = TempDir::new().unwrap();
    let junk = write(t.path(), "junk.csv", "a,b\n1,2\n");
    let o = casemix(&["hrg", "--cohort", s(&junk), "--out", s(&t.path().join("h"))]);
    assert_eq!(code(&o), 2);
    let cfg = write(t.path(), "p.json", PIPELINE);
    let o = casemix(&["train", "--cohort", s(&junk), "--config", s(&cfg), "--out", s(&t.path().join("r"))]);
    assert_eq!(code(&o), 2);
    assert!(!stderr(&o).contains("panicked"));
}

fn train(dir: &Path, csv: &Path, name: &str) -> PathBuf {
    let cfg = write(dir, "p.json", PIPELINE);
    let out = dir.join(name);
    let o = casemix(&["train", "--cohort", s(csv), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn train_writes_run_and_is_repeatable() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 400);
    let a = train(t.path(), &csv, "a");
    let b = train(t.path(), &csv, "b");
    for f in ["model.json", "final_labels.csv", "metrics.json", "provenance.json", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
    let ma: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["outputs"]["model.json"], sha256_hex(&fs::read(a.join("model.json")).unwrap()));
}

#[test]
fn train_stage_failure_exit_code() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 60);
    let cfg = write(t.path(), "p.json", r#"{"k": 500, "seeds": {"clustering": 1, "split": 2, "oversample": 3}}"#);
    let o = casemix(&["train", "--cohort", s(&csv), "--config", s(&cfg), "--out", s(&t.path().join("r"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("clustering"), "{}", stderr(&o));
}

#[test]
fn evaluate_reports_and_svgs() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 400);
    let run = train(t.path(), &csv, "run");
    let hrg = t.path().join("hrg");
    assert_eq!(code(&casemix(&["hrg", "--cohort", s(&csv), "--out", s(&hrg)])), 0);
    let out = t.path().join("report");
    let o = casemix(&[
        "evaluate",
        "--result",
        s(&run),
        "--hrg",
        s(&hrg.join("hrg_labels.csv")),
        "--out",
        s(&out),
        "--svg",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cmp: Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    for side in ["train", "test"] {
        let factors = cmp[side]["factors"].as_array().unwrap();
        assert_eq!(factors.len(), 3);
        assert!(factors.iter().all(|f| f["ratio"].is_f64() || f["ratio_infinite"] == true));
    }
    let svgs: Vec<PathBuf> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "svg"))
        .collect();
    assert!(svgs.len() >= 4);
    for p in svgs {
        let text = fs::read_to_string(&p).unwrap();
        roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    assert!(fs::read_to_string(out.join("rules.txt")).unwrap().contains("-> class"));
}

#[test]
fn evaluate_rejects_mismatched_labels() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 400);
    let run = train(t.path(), &csv, "run");
    let short = write(t.path(), "short.csv", "id,hrg_label\nP000001,1\n");
    let o = casemix(&["evaluate", "--result", s(&run), "--hrg", s(&short), "--out", s(&t.path().join("e"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn all_is_byte_identical_across_thread_counts() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "all.json",
        &format!(r#"{{"cohort": {{"n": 600, "seed": 5}}, "pipeline": {PIPELINE}}}"#),
    );
    let a = t.path().join("a");
    let b = t.path().join("b");
    let o = casemix(&["--threads", "1", "all", "--config", s(&cfg), "--out", s(&a), "--svg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_casemix"))
        .args(["all", "--config", s(&cfg), "--out", s(&b), "--svg"])
        .env("CASEMIX_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ha = tree_hashes(&a);
    assert!(ha.contains_key("manifest.json") && ha.contains_key("run/model.json") && ha.contains_key("report/comparison.json"));
    assert_eq!(ha, tree_hashes(&b));

    let c = t.path().join("c");
    let o = casemix(&["replay", "--manifest", s(&a.join("manifest.json")), "--out", s(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(ha, tree_hashes(&c));
}

#[test]
fn replay_detects_changed_input() {
    let t = TempDir::new().unwrap();
    let csv = cohort(t.path(), 30);
    let out = t.path().join("h");
    assert_eq!(code(&casemix(&["hrg", "--cohort", s(&csv), "--out", s(&out)])), 0);
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push('\n');
    fs::write(&csv, text).unwrap();
    let o = casemix(&["replay", "--manifest", s(&out.join("manifest.json")), "--out", s(&t.path().join("h2"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn zero_threads_rejected() {
    let o = casemix(&["--threads", "0", "generate", "--config", "x", "--out", "y"]);
    assert_eq!(code(&o), 2);
}
