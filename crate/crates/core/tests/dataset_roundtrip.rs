use agetrace::imaging::FrameKind;
use agetrace::manifest::DatasetManifest;
use agetrace::sim::{synthesize, write_dataset, DatasetSpec, GroundTruth};
use serde_json::json;

fn spec(n_sessions: usize, per_session: usize, forced: serde_json::Value) -> DatasetSpec {
    let times: Vec<f64> = (0..n_sessions).map(|s| 30.0 * s as f64).collect();
    serde_json::from_value(json!({
        "dataset_id": "roundtrip",
        "profile": { "width": 32, "height": 24, "pixel_size_um": 4.0, "sensor_type": "APS", "read_noise_sigma": 1.0, "prnu_sigma": 0.01 },
        "session_times": times,
        "images_per_session": per_session,
        "queries_per_session": 1,
        "scene": { "type": "textured", "seed": 1, "mean": 80.0, "contrast": 0.2 },
        "random_defects": false,
        "forced_defects": forced,
        "rng_seed": 5,
    }))
    .expect("spec parses")
}

#[test]
fn written_manifest_reads_back_with_identical_images() {
    let spec = spec(3, 2, json!([]));
    let data = synthesize(&spec).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let written = write_dataset(&spec, &data, tmp.path()).unwrap();
    let read = DatasetManifest::read(tmp.path().join("manifest.jsonl")).unwrap();
    assert_eq!(read.records, written.records);
    assert_eq!(read.records.len(), data.frames.len());
    for (record, frame) in read.records.iter().zip(&data.frames) {
        assert_eq!(read.load_image(record).unwrap(), frame.image, "{}", record.path);
        assert_eq!(record.session_index, frame.session_index);
    }
    let scenes = read.chronological(FrameKind::Scene);
    assert!(scenes.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    assert_eq!(scenes.iter().filter(|r| r.is_trusted()).count(), 3 * 2);
}

#[test]
fn minimal_dataset_has_one_record() {
    let spec = spec(1, 1, json!([]));
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = spec;
    spec.queries_per_session = 0;
    let data = synthesize(&spec).unwrap();
    write_dataset(&spec, &data, tmp.path()).unwrap();
    let read = DatasetManifest::read(tmp.path().join("manifest.jsonl")).unwrap();
    assert_eq!(read.records.len(), 1);
    assert_eq!(std::fs::read_dir(tmp.path().join("images")).unwrap().count(), 1);
}

#[test]
fn forced_onset_lands_between_its_sessions() {
    let forced = json!([{ "row": 10, "col": 12, "dark_current": 80.0, "offset": 10.0, "onset_time": 45.0 }]);
    let spec = spec(3, 2, forced);
    let tmp = tempfile::tempdir().unwrap();
    let data = synthesize(&spec).unwrap();
    write_dataset(&spec, &data, tmp.path()).unwrap();
    let text = std::fs::read_to_string(tmp.path().join("ground_truth.json")).unwrap();
    let truth: GroundTruth = serde_json::from_str(&text).unwrap();
    assert_eq!(truth, data.ground_truth);
    assert_eq!(truth.defects.len(), 1);
    let onset = truth.defects[0].onset_time;
    assert!(truth.session_times[1] < onset && onset < truth.session_times[2]);
}
