use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sample_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_corpus.csv")
}

fn polyview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyview"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn polyview")
}

fn ok(args: &[&str]) {
    let out = polyview(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn artifact_hashes(out: &Path) -> BTreeMap<String, String> {
    let manifest = read_json(&out.join("manifest.json"));
    let mut hashes = BTreeMap::new();
    for stage in manifest["stages"].as_object().unwrap().values() {
        for (k, v) in stage["artifacts"].as_object().unwrap() {
            hashes.insert(k.clone(), v.as_str().unwrap().to_string());
        }
    }
    hashes
}

/// Views constant within each segment so the cumulative curve is a polyline.
fn three_segment_corpus(path: &Path, count: usize) {
    let mut text = String::new();
    for i in 0..count {
        let a = 200 + 40 * (i % 7) as u64;
        let b = 20 + 5 * (i % 3) as u64;
        let c = 100 + 30 * (i % 5) as u64;
        let mut row = vec![format!("p{i}"), "0".into()];
        row.extend((0..20).map(|_| a.to_string()));
        row.extend((0..20).map(|_| b.to_string()));
        row.extend((0..20).map(|_| c.to_string()));
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn score_without_models_reports_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let input = sample_corpus();
    ok(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    ok(&["features", "--out", out.to_str().unwrap()]);
    let result = polyview(&["score", "--out", out.to_str().unwrap()]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("missing upstream artifact"), "{stderr}");
    assert!(stderr.contains("models.json"), "{stderr}");
}

#[test]
fn features_without_fit_reports_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let result = polyview(&["features", "--out", dir.path().to_str().unwrap()]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("fits.json"));
}

#[test]
fn fit_on_sample_corpus_covers_one_to_five_segments() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample_corpus();
    ok(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let fits = read_json(&dir.path().join("fits.json"));
    let fits = fits.as_array().unwrap();
    assert_eq!(fits.len(), 6);
    let mut counts: Vec<u64> = fits.iter().map(|f| f["n_segments"].as_u64().unwrap()).collect();
    assert!(counts.iter().all(|n| (1..=5).contains(n)));
    counts.sort_unstable();
    counts.dedup();
    assert_eq!(counts, vec![1, 2, 3, 4, 5]);
}

#[test]
fn cluster_k3_yields_at_most_three_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("three.csv");
    three_segment_corpus(&input, 40);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    ok(&["fit", "--input", input.to_str().unwrap(), "--out", out_s]);
    ok(&["features", "--out", out_s]);
    ok(&["cluster", "--out", out_s, "--k", "3"]);
    let mut reader = csv::Reader::from_path(out.join("n3/clusters.csv")).unwrap();
    let mut labels = std::collections::BTreeSet::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        rows += 1;
        if !record[1].is_empty() {
            labels.insert(record[1].parse::<usize>().unwrap());
        }
    }
    assert_eq!(rows, 40);
    assert!(!labels.is_empty() && labels.len() <= 3, "{labels:?}");
    assert!(labels.iter().all(|&l| l < 3));
}

#[test]
fn stages_in_order_match_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample_corpus();
    let input = input.to_str().unwrap();
    let full = dir.path().join("full");
    let staged = dir.path().join("staged");
    ok(&["run", "--input", input, "--out", full.to_str().unwrap(), "--seed", "11"]);
    let s = staged.to_str().unwrap();
    ok(&["fit", "--input", input, "--out", s, "--seed", "11"]);
    for stage in ["features", "cluster", "model", "score"] {
        ok(&[stage, "--out", s]);
    }
    let a = artifact_hashes(&full);
    assert!(a.contains_key("n4/adherence.json"));
    assert_eq!(a, artifact_hashes(&staged));
    for rel in a.keys() {
        assert_eq!(
            fs::read(full.join(rel)).unwrap(),
            fs::read(staged.join(rel)).unwrap(),
            "{rel}"
        );
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample_corpus();
    let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("run{i}"))).collect();
    for out in &runs {
        ok(&[
            "run",
            "--input",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
            "--control",
        ]);
    }
    let a = artifact_hashes(&runs[0]);
    assert!(a.contains_key("control/angle_histogram.json"));
    assert_eq!(a, artifact_hashes(&runs[1]));
}

#[test]
fn seed_changes_synthetic_artifacts_only() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample_corpus();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&[
        "run",
        "--input",
        input.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "1",
    ]);
    ok(&[
        "run",
        "--input",
        input.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    let (ha, hb) = (artifact_hashes(&a), artifact_hashes(&b));
    assert_eq!(ha["fits.json"], hb["fits.json"]);
    assert_eq!(ha["n4/models.json"], hb["n4/models.json"]);
    assert_ne!(ha["n4/adherence.json"], hb["n4/adherence.json"]);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("polyview.toml");
    fs::write(&config, "k = 2\ngrid = 12\n\n[fit]\nmax_breakpoints = 2\n").unwrap();
    let input = sample_corpus();
    let out = dir.path().join("out");
    ok(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k",
        "5",
        "--max-breakpoints",
        "4",
        "--config",
        config.to_str().unwrap(),
    ]);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["k"], 2);
    assert_eq!(manifest["config"]["grid"], 12);
    assert_eq!(manifest["config"]["fit"]["max_breakpoints"], 2);
    let fits = read_json(&out.join("fits.json"));
    assert!(fits
        .as_array()
        .unwrap()
        .iter()
        .all(|f| f["n_segments"].as_u64().unwrap() <= 3));
}

#[test]
fn invalid_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample_corpus();
    let out = dir.path().join("out");
    let result = polyview(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--rmse-threshold",
        "0",
    ]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("rmse_threshold"));

    let config = dir.path().join("bad.toml");
    fs::write(&config, "clusters = 4\n").unwrap();
    let result = polyview(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(!result.status.success());
}
