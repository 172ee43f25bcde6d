use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use clinnote::corpus::{build_cohort, load_notes, window_docs, ColumnMap};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinnote"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "clinnote {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn sha(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

// A small corpus trained once, shared by the tests below.
fn trained() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["synth", "--n", "300", "--seed", "2", "--out-dir", p(&root)]);
        ok(&[
            "train",
            "--corpus",
            p(&root.join("notes.csv")),
            "--out-dir",
            p(&root.join("train")),
            "--max-len",
            "80",
            "--seed",
            "2",
        ]);
        Fixture { _dir: dir, root }
    })
}

#[test]
fn synth_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--n", "2000", "--positive-rate", "0.098", "--seed", "7", "--out-dir", p(d)]);
    }
    assert_eq!(sha(&a.join("notes.csv")), sha(&b.join("notes.csv")));
    let store = load_notes(&a.join("notes.csv"), &ColumnMap::default()).unwrap();
    assert_eq!(store.stays.len(), 2000);
    let positives = store.stays.iter().filter(|s| s.outcome == 1).count() as f64;
    // Binomial(2000, 0.098): mean 196, sd 13.3.
    assert!((positives - 196.0).abs() < 4.0 * 13.3, "{positives} positives");
    let markers = json(&a.join("markers.json"));
    assert_eq!(markers["markers"]["positives"].as_f64(), Some(positives));
    assert_eq!(markers["provenance"]["corpus_sha256"].as_str().unwrap(), sha(&a.join("notes.csv")));
}

#[test]
fn invalid_arguments_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(run(&["synth", "--positive-rate", "1.5", "--out-dir", out]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--n", "many"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--jobs", "0", "--corpus", "x.csv", "--out-dir", out]).status.code(), Some(1));
    assert_eq!(run(&["cohort", "--column", "nope=X", "--corpus", "x.csv"]).status.code(), Some(1));
    assert_eq!(run(&["cohort", "--out-dir", out]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["cohort", "--corpus", p(&dir.path().join("absent.csv")), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_one_checkpoint_and_auc_per_fold() {
    let f = trained();
    let train = f.root.join("train");
    let ckpts = std::fs::read_dir(&train)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".ckpt.json"))
        .count();
    assert_eq!(ckpts, 5);
    let m = json(&train.join("metrics.json"));
    assert_eq!(m["summary"]["fold_aucs"].as_array().unwrap().len(), 5);
    assert_eq!(m["folds"].as_array().unwrap().len(), 5);
    assert_eq!(m["provenance"]["run_config"]["epochs"], 3);
    assert_eq!(m["provenance"]["run_config"]["max_len"], 80);
    assert_eq!(m["provenance"]["corpus_sha256"].as_str().unwrap(), sha(&f.root.join("notes.csv")));
    let svg = std::fs::read_to_string(train.join("roc.svg")).unwrap();
    assert_eq!(svg.matches("class=\"roc\"").count(), 5);
    // Checkpoints carry the same provenance.
    let ck = json(&train.join("fold_2.ckpt.json"));
    assert_eq!(ck["provenance"], m["provenance"]);
}

#[test]
fn shorter_window_gives_prefix_documents() {
    let f = trained();
    let csv = f.root.join("notes.csv");
    let dir = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for w in ["24", "48"] {
        let out = dir.path().join(w);
        ok(&["cohort", "--corpus", p(&csv), "--window-hours", w, "--out-dir", p(&out)]);
        let s = json(&out.join("cohort_summary.json"));
        assert_eq!(s["provenance"]["run_config"]["window_hours"].as_f64(), Some(w.parse().unwrap()));
        counts.push(s["windowed_patients"].as_u64().unwrap());
    }
    assert!(counts[0] <= counts[1]);
    let store = load_notes(&csv, &ColumnMap::default()).unwrap();
    let cohort = build_cohort(&store, 48.0, true).unwrap();
    let (d24, d48) = (window_docs(&cohort, 24.0), window_docs(&cohort, 48.0));
    for d in &d24.docs {
        let full = d48.docs.iter().find(|x| x.patient_id == d.patient_id).unwrap();
        assert!(full.text.starts_with(&d.text));
        assert!(d.word_count() <= full.word_count());
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let f = trained();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "window_hours = 24.0\nmin_stay_hours = 48.0\nfolds = 3\n").unwrap();
    let out = dir.path().join("out");
    ok(&[
        "cohort",
        "--config",
        p(&cfg),
        "--corpus",
        p(&f.root.join("notes.csv")),
        "--window-hours",
        "36",
        "--out-dir",
        p(&out),
    ]);
    let rc = &json(&out.join("cohort_summary.json"))["provenance"]["run_config"];
    assert_eq!(rc["window_hours"], 36.0);
    assert_eq!(rc["folds"], 3);
}

#[test]
fn attribute_one_patient_raw_and_smoothed() {
    let f = trained();
    let m = json(&f.root.join("train/metrics.json"));
    let pid = m["folds"][0]["predictions"][0]["patient_id"].as_str().unwrap().to_owned();
    let ckpt = f.root.join("train/fold_0.ckpt.json");
    let dir = tempfile::tempdir().unwrap();
    for smoothed in ["true", "false"] {
        let out = dir.path().join(smoothed);
        ok(&[
            "attribute",
            "--checkpoint",
            p(&ckpt),
            "--corpus",
            p(&f.root.join("notes.csv")),
            "--patients",
            &pid,
            "--smoothed",
            smoothed,
            "--out-dir",
            p(&out),
        ]);
        let names: Vec<String> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names.iter().filter(|n| n.ends_with(".heatmap.html")).count(), 1);
        assert_eq!(names.iter().filter(|n| n.ends_with(".attrib.json")).count(), 1);
        assert!(names.contains(&"wordcloud.json".to_string()));

        let a = json(&out.join(format!("{pid}.attrib.json")));
        let key = if smoothed == "true" { "smoothed_values" } else { "position_values" };
        let expected: Vec<String> = a["attribution"][key]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| format!("title=\"{:.6e}\"", v.as_f64().unwrap()))
            .collect();
        let html = std::fs::read_to_string(out.join(format!("{pid}.heatmap.html"))).unwrap();
        for t in &expected {
            assert!(html.contains(t.as_str()), "{t} not rendered");
        }
        let gap = a["completeness_gap"].as_f64().unwrap();
        assert!(gap < 1e-9, "completeness gap {gap}");
    }
}

#[test]
fn attribute_note_file() {
    let f = trained();
    let dir = tempfile::tempdir().unwrap();
    let note = dir.path().join("bedside.txt");
    std::fs::write(&note, "Pt resting comfortably, tolerating diet, ambulating with assist.").unwrap();
    let out = dir.path().join("out");
    ok(&[
        "attribute",
        "--checkpoint",
        p(&f.root.join("train/fold_1.ckpt.json")),
        "--note-file",
        p(&note),
        "--target",
        "logit",
        "--out-dir",
        p(&out),
    ]);
    let a = json(&out.join("bedside.attrib.json"));
    assert_eq!(a["attribution"]["target"], "logit");
    assert!(out.join("padding_hist.svg").is_file());
}

#[test]
fn missing_checkpoint_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = run(&[
        "attribute",
        "--checkpoint",
        p(&dir.path().join("absent.ckpt.json")),
        "--note-file",
        "whatever.txt",
        "--out-dir",
        p(&out),
    ]);
    assert_ne!(res.status.code(), Some(0));
    assert!(!out.exists());
}

#[test]
fn verify_report_and_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good");
    let small = ["--gradient-instances", "3", "--completeness-inputs", "3"];
    let mut args = vec!["verify", "--seeds", "0..2", "--out-dir", p(&good)];
    args.extend(small);
    assert_eq!(run(&args).status.code(), Some(0));
    let r = json(&good.join("verify_report.json"));
    assert_eq!(r["report"]["passed"], true);
    assert_eq!(r["report"]["options"]["seeds"], serde_json::json!([0, 1]));

    let bad = dir.path().join("bad");
    let mut args = vec!["verify", "--inject-fault", "flip-gradient-sign", "--out-dir", p(&bad)];
    args.extend(small);
    assert_eq!(run(&args).status.code(), Some(3));
    let r = json(&bad.join("verify_report.json"));
    let checks = r["report"]["checks"].as_array().unwrap();
    let gradient = checks.iter().find(|c| c["name"] == "gradient").unwrap();
    assert_eq!(gradient["passed"], false);
    assert!(checks.iter().filter(|c| c["name"] != "gradient").all(|c| c["passed"] == true));
}
