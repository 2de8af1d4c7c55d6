use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn penkick(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penkick"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = penkick(d, &["gen", "--n", "9", "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for rel in [
        "dataset/manifest.json",
        "dataset/samples/s00004/sample.json",
        "gen.config.json",
    ] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    assert!(a.join("dataset/samples/s00004/frame_7.png").exists());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(penkick(dir.path(), &["gen", "--bogus"]).status.code(), Some(2));
    assert_eq!(penkick(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(penkick(dir.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn empty_train_split_is_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    assert!(penkick(dir.path(), &["gen", "--n", "6"]).status.success());
    let manifest = dir.path().join("dataset/manifest.json");
    let text = fs::read_to_string(&manifest).unwrap().replace("\"train\"", "\"test\"");
    fs::write(&manifest, text).unwrap();
    let o = penkick(
        &dir.path().join("run"),
        &["train", "--data", manifest.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("InsufficientData"), "{}", stderr(&o));
}

#[test]
fn domain_errors_print_class_name() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.ckpt");
    let stream = dir.path().join("s.jsonl");
    fs::write(&stream, "{\"frame\": 0, \"detections\": [\n").unwrap();
    let o = penkick(
        dir.path(),
        &[
            "infer",
            "--stream",
            stream.to_str().unwrap(),
            "--ckpt",
            missing.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("CheckpointError"), "{}", stderr(&o));
    let o = penkick(dir.path(), &["segment", "--stream", stream.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ProviderParseError"), "{}", stderr(&o));
}

#[test]
fn full_workflow_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let gen = penkick(&root.join("gen"), &["gen", "--n", "9", "--streams"]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    let data = root.join("gen/dataset");
    let stream = data.join("streams/s00002.jsonl");

    let seg = penkick(
        &root.join("seg"),
        &["segment", "--stream", stream.to_str().unwrap(), "--label", "right"],
    );
    assert!(seg.status.success(), "{}", stderr(&seg));
    let sample = root.join("seg/segments/s00002");
    assert!(sample.join("sample.json").exists());
    assert!(root.join("seg/segment.config.json").exists());

    let tr = penkick(
        &root.join("train"),
        &["train", "--data", data.to_str().unwrap(), "--epochs", "1"],
    );
    assert!(tr.status.success(), "{}", stderr(&tr));
    let ckpt = root.join("train/model.ckpt");
    assert_eq!(
        fs::read_to_string(root.join("train/history.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    let ev = penkick(
        &root.join("eval"),
        &[
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ],
    );
    assert!(ev.status.success(), "{}", stderr(&ev));
    assert!(String::from_utf8_lossy(&ev.stdout).contains("test accuracy (%)"));
    assert!(root.join("eval/confusion_test.csv").exists());

    let inf = penkick(
        &root.join("infer"),
        &[
            "infer",
            "--stream",
            stream.to_str().unwrap(),
            "--ckpt",
            ckpt.to_str().unwrap(),
        ],
    );
    assert!(inf.status.success(), "{}", stderr(&inf));
    let pred: serde_json::Value =
        serde_json::from_slice(&fs::read(root.join("infer/prediction.json")).unwrap()).unwrap();
    let p = &pred["probs"];
    let sum = p["left"].as_f64().unwrap() + p["middle"].as_f64().unwrap() + p["right"].as_f64().unwrap();
    assert!((sum - 1.0).abs() < 1e-5);
    assert!(pred["latency_ms"].as_f64().unwrap() > 0.0);

    let at = penkick(
        &root.join("attn"),
        &[
            "attn",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--sample",
            sample.to_str().unwrap(),
        ],
    );
    assert!(at.status.success(), "{}", stderr(&at));
    assert!(root.join("attn/attention/s00002/overlay_7.png").exists());

    let retrain = penkick(
        &root.join("train2"),
        &["train", "--data", data.to_str().unwrap(), "--epochs", "1"],
    );
    assert!(retrain.status.success());
    assert_eq!(
        fs::read(ckpt).unwrap(),
        fs::read(root.join("train2/model.ckpt")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = penkick(
        dir.path(),
        &["sweep", "--thresholds", "0.15,0.25,0.35", "--n", "9", "--epochs", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Distance threshold"));
}
