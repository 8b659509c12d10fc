use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use das_core::cnn::{write_checkpoint, CnnModel, CnnShape};
use das_core::tracker::read_events;

fn das(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_das"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run das")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SCENE: &str = r#"{
  "sensor_count": 40, "duration_s": 20, "noise_std": 0.01, "seed": 5,
  "sources": [
    {"kind": "Excavator", "position_m": 80, "start_s": 2, "end_s": 20, "amplitude": 2.0},
    {"kind": "Walking", "position_m": 30, "start_s": 0, "end_s": 20, "amplitude": 1.0}
  ]
}"#;

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&das(dir.path(), &[])), 1);
    assert_eq!(code(&das(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&das(dir.path(), &["bench", "--pipeline", "sideways"])), 1);
    assert_eq!(code(&das(dir.path(), &["synth", "--out", "x.das1"])), 1, "missing --config");
    assert_eq!(code(&das(dir.path(), &["--help"])), 0);
    assert_eq!(code(&das(dir.path(), &["--version"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.das1"), b"DAS1\x01\x00\x00\x00").unwrap();
    let out = das(dir.path(), &["features", "--input", "bad.das1", "--out", "f.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
    fs::write(dir.path().join("scene.json"), "{\"sensor_count\": 0, \"duration_s\": 1}").unwrap();
    assert_eq!(code(&das(dir.path(), &["synth", "--config", "scene.json", "--out", "t.das1"])), 2);
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scene.json"), SCENE).unwrap();

    let out = das(d, &["synth", "--config", "scene.json", "--out", "t.das1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::metadata(d.join("t.das1")).unwrap().len(), 24 + 4 * 40 * 20 * 2000);
    assert!(d.join("t.labels.jsonl").exists());

    // Same seed, same bytes; another seed differs.
    das(d, &["synth", "--config", "scene.json", "--out", "again.das1"]);
    das(d, &["synth", "--config", "scene.json", "--seed", "6", "--out", "other.das1"]);
    let bytes = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(bytes("t.das1"), bytes("again.das1"));
    assert_ne!(bytes("t.das1"), bytes("other.das1"));

    let out = das(d, &["features", "--input", "t.das1", "--labels", "t.labels.jsonl", "--out", "f.jsonl"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(d.join("f.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 40 * 20);

    let out = das(d, &["train-classic", "--input", "f.jsonl", "--classifier", "tree", "--out", "tree.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test accuracy"));

    // Unlabeled rows cannot train.
    das(d, &["features", "--input", "t.das1", "--out", "plain.jsonl"]);
    assert_eq!(code(&das(d, &["train-classic", "--input", "plain.jsonl", "--out", "m.json"])), 1);

    let cnn = CnnModel::zeros(CnnShape::default()).unwrap();
    write_checkpoint(&cnn, fs::File::create(d.join("zero.cnn1")).unwrap()).unwrap();
    let out = das(
        d,
        &[
            "detect", "--input", "t.das1", "--classic-model", "tree.json", "--cnn-model", "zero.cnn1", "--out",
            "events.jsonl", "--threads", "1",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // 20 s cannot confirm a 90-detection track and the zero network never
    // fires, so the log exists but is empty.
    let events = read_events(std::io::BufReader::new(fs::File::open(d.join("events.jsonl")).unwrap())).unwrap();
    assert!(events.is_empty());

    // A pipeline without its model is a usage error.
    assert_eq!(code(&das(d, &["detect", "--input", "t.das1", "--pipeline", "image", "--out", "e.jsonl"])), 1);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scene.json"), SCENE).unwrap();
    das(d, &["synth", "--config", "scene.json", "--out", "t.das1"]);
    das(d, &["features", "--input", "t.das1", "--labels", "t.labels.jsonl", "--out", "f.jsonl"]);
    fs::write(d.join("mlp.json"), r#"{"settings": {"mlp": {"epochs": 5, "learning_rate": 1e308}}}"#).unwrap();
    let out = das(d, &["train-classic", "--input", "f.jsonl", "--classifier", "mlp", "--config", "mlp.json", "--out", "m.json"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
