use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn agetrace(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agetrace"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) {
    let out = agetrace(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn spec(seed: u64, n_sessions: usize) -> Value {
    let times: Vec<f64> = (0..n_sessions).map(|s| 60.0 * s as f64).collect();
    let positions = [(5, 7), (20, 30), (33, 12), (40, 50), (11, 44), (28, 58), (3, 25), (45, 3)];
    let defects: Vec<Value> = (1..n_sessions)
        .map(|s| {
            let (row, col) = positions[(s - 1) % positions.len()];
            json!({ "row": row, "col": col, "dark_current": 60.0, "offset": 5.0 * s as f64, "onset_time": 60.0 * s as f64 - 30.0 })
        })
        .collect();
    json!({
        "dataset_id": "cli-test",
        "profile": { "width": 64, "height": 48, "pixel_size_um": 4.0, "sensor_type": "APS", "read_noise_sigma": 1.0, "prnu_sigma": 0.01 },
        "session_times": times,
        "images_per_session": 6,
        "queries_per_session": 3,
        "scene": { "type": "textured", "seed": 3, "mean": 90.0, "contrast": 0.3 },
        "meta_ranges": { "iso": [200, 400], "exposure_s": [0.5, 1.0], "focal_mm": [35, 70], "f_number": [4, 16] },
        "dark_fields": { "per_session": 2 },
        "random_defects": false,
        "forced_defects": defects,
        "prnu_drift_sigma": 0.02,
        "rng_seed": seed,
    })
}

/// Writes a spec and simulates it into `<tmp>/data`.
fn simulated(seed: u64, n_sessions: usize) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("spec.json"), spec(seed, n_sessions).to_string()).unwrap();
    ok(&["simulate", "--spec", "spec.json", "--out", "data", "--report", "sim.json"], tmp.path());
    let manifest = tmp.path().join("data/manifest.jsonl");
    (tmp, manifest)
}

#[test]
fn simulate_is_byte_reproducible() {
    let (tmp, _) = simulated(11, 4);
    let dir = tmp.path();
    ok(&["simulate", "--spec", "spec.json", "--out", "again", "--report", "sim2.json"], dir);
    for f in ["manifest.jsonl", "ground_truth.json", "spec_echo.json"] {
        let a = std::fs::read(dir.join("data").join(f)).unwrap();
        let b = std::fs::read(dir.join("again").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let mut images: Vec<_> = std::fs::read_dir(dir.join("data/images")).unwrap().map(|e| e.unwrap().file_name()).collect();
    images.sort();
    assert!(!images.is_empty());
    for name in images {
        let a = std::fs::read(dir.join("data/images").join(&name)).unwrap();
        let b = std::fs::read(dir.join("again/images").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between runs");
    }
    let report = read_report(&dir.join("sim.json"));
    assert_eq!(report["tool"], "agetrace");
    assert_eq!(report["command"], "simulate");
    assert_eq!(report["seed"], 11);
    assert_eq!(report["result"]["n_defects"], 3);
    assert_eq!(report["result"]["n_scenes"], 4 * 9);
}

#[test]
fn invalid_inputs_exit_with_usage_or_io_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut bad = spec(1, 3);
    bad["session_times"] = json!([0.0, 10.0, 10.0]);
    std::fs::write(dir.join("bad.json"), bad.to_string()).unwrap();
    let out = agetrace(&["simulate", "--spec", "bad.json", "--out", "d"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("session_times"));

    let mut unknown = spec(1, 3);
    unknown["colour"] = json!("red");
    std::fs::write(dir.join("unknown.json"), unknown.to_string()).unwrap();
    assert_eq!(agetrace(&["simulate", "--spec", "unknown.json", "--out", "d"], dir).status.code(), Some(2));

    assert_eq!(agetrace(&["simulate", "--spec", "missing.json", "--out", "d"], dir).status.code(), Some(3));
    assert_eq!(agetrace(&["detect", "--manifest", "missing.jsonl"], dir).status.code(), Some(3));
}

#[test]
fn analysis_commands_validate_their_arguments() {
    let (tmp, _) = simulated(2, 4);
    let dir = tmp.path();
    let m = "data/manifest.jsonl";
    let code = |args: &[&str]| agetrace(args, dir).status.code();
    assert_eq!(code(&["detect", "--manifest", m, "--set", "threshold=1", "--set", "bogus=2"]), Some(2));
    assert_eq!(code(&["train", "--manifest", m, "--estimator", "knn", "--model", "k.json"]), Some(2));
    assert_eq!(code(&["train", "--manifest", m, "--estimator", "ml", "--model", "k.json"]), Some(2));
    assert_eq!(code(&["train", "--manifest", m, "--estimator", "svm", "--model", "k.json"]), Some(2));
    ok(&["detect", "--manifest", m, "--out", "det.json"], dir);
    ok(&["train", "--manifest", m, "--estimator", "ml", "--defects", "det.json", "--model", "ml.json"], dir);
    assert_eq!(code(&["diagnose", "--manifest", m, "--model", "ml.json"]), Some(2));
    assert_eq!(code(&["train", "--manifest", m, "--estimator", "nb-ne", "--defects", "data/ground_truth.json", "--model", "x.json"]), Some(2));
}

#[test]
fn ml_pipeline_beats_the_inter_onset_gap() {
    let (tmp, m) = simulated(7, 7);
    let dir = tmp.path();
    let m = m.to_str().unwrap();
    ok(&["detect", "--manifest", m, "--out", "det.json"], dir);
    let det = read_report(&dir.join("det.json"));
    let defects = det["result"]["defects"].as_array().unwrap();
    assert_eq!(defects.len(), 6);
    let mut onsets: Vec<u64> = defects.iter().map(|d| d["onset_index_j"].as_u64().unwrap()).collect();
    onsets.sort_unstable();
    assert_eq!(onsets, vec![6, 12, 18, 24, 30, 36]);

    ok(&["train", "--manifest", m, "--estimator", "ml", "--defects", "det.json", "--model", "ml.json", "--out", "train.json"], dir);
    ok(&["approximate", "--manifest", m, "--model", "ml.json", "--ground-truth", "data/ground_truth.json", "--out", "ap.json"], dir);
    let ap = read_report(&dir.join("ap.json"));
    let metrics = &ap["result"]["index_metrics"];
    let rel = metrics["relative_estimation_error"].as_f64().unwrap();
    assert!(rel < 1.0, "relative estimation error {rel}");
    assert_eq!(ap["result"]["n_queries"], 21);
    assert!(ap["result"]["classification"]["accuracy"].as_f64().unwrap() >= 0.9);
}

#[test]
fn nb_and_knn_models_round_trip_through_approximate() {
    let (tmp, m) = simulated(7, 5);
    let dir = tmp.path();
    let m = m.to_str().unwrap();
    ok(&["detect", "--manifest", m, "--out", "det.json"], dir);
    ok(&["train", "--manifest", m, "--estimator", "nb-kde", "--defects", "det.json", "--model", "nb.json"], dir);
    ok(&["approximate", "--manifest", m, "--model", "nb.json", "--out", "ap_nb.json"], dir);
    let acc = read_report(&dir.join("ap_nb.json"))["result"]["classification"]["accuracy"].as_f64().unwrap();
    assert!(acc >= 0.9, "nb-kde accuracy {acc}");

    let knn = [
        "train", "--manifest", m, "--estimator", "knn", "--seed", "3", "--set", "knn.block_size=16", "--set",
        "knn.n_blocks=4", "--set", "knn.k_select=20", "--model",
    ];
    ok(&[&knn[..], &["knn.json", "--out", "t1.json"]].concat(), dir);
    ok(&[&knn[..], &["knn2.json", "--out", "t2.json"]].concat(), dir);
    assert_eq!(std::fs::read(dir.join("knn.json")).unwrap(), std::fs::read(dir.join("knn2.json")).unwrap());
    let t1 = read_report(&dir.join("t1.json"));
    assert_eq!(t1["seed"], 3);
    assert_eq!(t1["config"]["knn"]["block_size"], 16);
    ok(&["approximate", "--manifest", m, "--model", "knn.json", "--out", "ap_knn.json"], dir);
    assert_eq!(read_report(&dir.join("ap_knn.json"))["result"]["estimator"], "knn");
}

#[test]
fn order_recovers_session_chronology() {
    let (tmp, m) = simulated(5, 6);
    let dir = tmp.path();
    ok(&["order", "--manifest", m.to_str().unwrap(), "--out", "order.json"], dir);
    let r = &read_report(&dir.join("order.json"))["result"];
    assert_eq!(r["matches_chronology"], true, "order {}", r["order"]);
    assert!(r["placement_adjacent_rate"].as_f64().unwrap() >= 0.8);
}

#[test]
fn diagnose_reports_verdict_and_csv_reproducibly() {
    let (tmp, m) = simulated(9, 5);
    let dir = tmp.path();
    let m = m.to_str().unwrap();
    ok(&["detect", "--manifest", m, "--out", "det.json"], dir);
    ok(&["train", "--manifest", m, "--estimator", "ml", "--defects", "det.json", "--model", "ml.json"], dir);
    let args = ["diagnose", "--manifest", m, "--model", "ml.json", "--seed", "4", "--set", "averages.n_sets=5"];
    ok(&[&args[..], &["--csv", "acc.csv", "--out", "d1.json"]].concat(), dir);
    ok(&[&args[..], &["--out", "d2.json"]].concat(), dir);
    assert_eq!(std::fs::read(dir.join("d1.json")).unwrap(), std::fs::read(dir.join("d2.json")).unwrap());
    let r = &read_report(&dir.join("d1.json"))["result"];
    assert_eq!(r["verdict"], "age-signal-consistent");
    let csv = std::fs::read_to_string(dir.join("acc.csv")).unwrap();
    assert!(csv.starts_with("input,symbol,accuracy,n_evaluated,n_failed\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn minimal_spec_writes_one_image_and_forced_onsets_reach_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut one = spec(1, 1);
    one["images_per_session"] = json!(1);
    one["queries_per_session"] = json!(0);
    one["dark_fields"] = json!({ "per_session": 0 });
    std::fs::write(dir.join("one.json"), one.to_string()).unwrap();
    ok(&["simulate", "--spec", "one.json", "--out", "one"], dir);
    let manifest = std::fs::read_to_string(dir.join("one/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.trim().is_empty()).count(), 1);
    assert_eq!(std::fs::read_dir(dir.join("one/images")).unwrap().count(), 1);

    let (tmp, _) = simulated(3, 3);
    let truth = read_report(&tmp.path().join("data/ground_truth.json"));
    let times: Vec<f64> = truth["session_times"].as_array().unwrap().iter().map(|t| t.as_f64().unwrap()).collect();
    for d in truth["defects"].as_array().unwrap() {
        let onset = d["onset_time"].as_f64().unwrap();
        assert!(times.windows(2).any(|w| w[0] < onset && onset < w[1]), "onset {onset} not between sessions");
    }
    assert_eq!(truth["defects"].as_array().unwrap().len(), 2);
}
