use std::path::PathBuf;
use std::process::{Command, Output};

fn curvaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvaudit"))
        .args(args)
        .output()
        .unwrap()
}

fn manifest(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../manifests")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn theory_prints_bound_report() {
    let o = curvaudit(&["theory", "--epsilon", "1", "--m", "10", "--loss-bound", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let b = v["theorem2_bound"].as_f64().unwrap();
    assert!((b - 26.800_025_632_971_98).abs() < 1e-9);
    assert_eq!(v["constants_unknown"], true);
}

#[test]
fn theory_rejects_bad_inputs() {
    let o = curvaudit(&["theory", "--epsilon", "1", "--m", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error"));
}

#[test]
fn fit_bound_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.csv");
    let mut csv = String::from("epsilon,value\n");
    for i in 0..10 {
        let e = 0.5 * 100f64.powf(i as f64 / 9.0);
        csv.push_str(&format!("{e},{}\n", 2.0 * (1.5 * (1.0 - (-e).exp()) + 0.3f64).powi(2)));
    }
    std::fs::write(&points, csv).unwrap();
    let out = dir.path().join("fit.json");
    let o = curvaudit(&[
        "fit-bound",
        "--points",
        points.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert!(v["residual"].as_f64().unwrap() < 1e-6);
    assert!(v["l_f"].as_f64().unwrap() >= 0.0);
}

#[test]
fn staged_subcommands_build_on_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let m = manifest("minimal.json");
    for (cmd, file) in [
        ("gen-data", "dataset.json"),
        ("train-shadows", "shadows/ledger.json"),
        ("score", "scores.jsonl"),
        ("attack", "attacks.jsonl"),
        ("evaluate", "metrics.json"),
    ] {
        let o = curvaudit(&[cmd, "--manifest", &m, "--out", out, "--jobs", "2"]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert!(dir.path().join(file).is_file(), "{cmd} did not write {file}");
    }
    let o = curvaudit(&["evaluate", "--manifest", &m, "--out", out]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("yeom"));
}

#[test]
fn seed_override_changes_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = manifest("minimal.json");
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = curvaudit(&[
            "evaluate",
            "--manifest",
            &m,
            "--out",
            dir.path().to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_ne!(
        std::fs::read(a.path().join("metrics.json")).unwrap(),
        std::fs::read(b.path().join("metrics.json")).unwrap()
    );
}

#[test]
fn missing_csv_reports_data_stage() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(manifest("minimal.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["dataset"] = serde_json::json!({"kind": "csv", "path": dir.path().join("nope.csv")});
    let path = dir.path().join("m.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = curvaudit(&[
        "evaluate",
        "--manifest",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage `data`"), "{}", stderr(&o));
}

#[test]
fn missing_output_directory_is_an_error() {
    let o = curvaudit(&["evaluate", "--manifest", &manifest("minimal.json")]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("output directory"));
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(manifest("minimal.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["n_shadow_models"] = 4.into();
    v["hyper"]["epochs"] = 3.into();
    let path = dir.path().join("m.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = dir.path().join("sweep");
    let o = curvaudit(&[
        "sweep",
        "--manifest",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sizes",
        "10,20",
        "--seeds",
        "1,2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.starts_with("size,seed,method,auroc,bal_acc"));
}
