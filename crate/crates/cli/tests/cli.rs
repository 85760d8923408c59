use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_shiftadd-dvs");

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SHIFTADD_DVS_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn result(out: &Path, command: &str) -> Value {
    let doc: Value =
        serde_json::from_slice(&std::fs::read(out.join(format!("{command}.json"))).unwrap())
            .unwrap();
    assert_eq!(doc["command"], command);
    doc["result"].clone()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen-data, full-data training, quantize, encode. Returns the encoded model.
fn build(out: &Path, seed: &str) -> std::path::PathBuf {
    ok(out, &["--seed", seed, "gen-data", "--per-class", "6"]);
    let base = out.join("data/base");
    ok(
        out,
        &[
            "--seed",
            seed,
            "train",
            "--data",
            p(&base),
            "--full",
            "--epochs",
            "2",
            "--batch-size",
            "8",
        ],
    );
    ok(
        out,
        &[
            "quantize",
            "--model",
            p(&out.join("train.sacw")),
            "--n",
            "3",
        ],
    );
    ok(
        out,
        &[
            "encode",
            "--model",
            p(&out.join("model.saqm")),
            "--bits",
            "5",
        ],
    );
    out.join("model-encoded.saqm")
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["bogus"][..], &["infer"], &["report", "--n", "three"]] {
        let o = run(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let o = run(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for v in ["zero", "0", "-3"] {
        let o = Command::new(BIN)
            .args(["--out", p(dir.path()), "report"])
            .env("SHIFTADD_DVS_THREADS", v)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(2), "{v}");
    }
    let o = Command::new(BIN)
        .args(["--out", p(dir.path()), "report"])
        .env("SHIFTADD_DVS_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn failures_print_one_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "infer",
            "--model",
            "/nonexistent.sacw",
            "--data",
            p(dir.path()),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("nonexistent"));

    let junk = dir.path().join("junk.saqm");
    std::fs::write(&junk, b"not a model").unwrap();
    let o = run(
        dir.path(),
        &["infer", "--model", p(&junk), "--data", p(dir.path())],
    );
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_ne!(err["error"]["kind"], "internal");
}

#[test]
fn report_prints_table_values() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["report", "--n", "3", "--bits", "3"]);
    assert!(
        text.contains("compression: N=3 bits=3 -> 28.125% of float32"),
        "{text}"
    );
    assert!(text.contains("frames per period: 3084"), "{text}");
    assert!(text.contains("real-time fiber: 38550 m"), "{text}");
}

#[test]
fn pipeline_stream_agrees_with_infer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let model = build(out, "3");
    let shifted = out.join("data/shifted");
    ok(out, &["infer", "--model", p(&model), "--data", p(&shifted)]);
    let infer = result(out, "infer");
    assert_eq!(infer["engine"], "shift");
    assert_eq!(infer["samples"], 18);
    let preds = infer["predictions"].as_array().unwrap();
    for pred in preds.iter().step_by(5) {
        let id = pred["id"].as_str().unwrap();
        ok(
            out,
            &[
                "simulate",
                "--model",
                p(&model),
                "--data",
                p(&shifted),
                "--sample",
                id,
            ],
        );
        let sim = result(out, "simulate");
        assert_eq!(sim["sample"], id);
        assert_eq!(sim["matches_batch"], true);
        assert_eq!(sim["stream_class"], pred["predicted"], "{id}");
        assert_eq!(sim["stream_logits"], pred["logits"], "{id}");
    }
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build(a.path(), "9");
    build(b.path(), "9");
    for f in [
        "data/base/manifest.json",
        "train.sacw",
        "model.saqm",
        "model-encoded.saqm",
    ] {
        let (x, y) = (
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
        );
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn result_document_replays_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build(a.path(), "4");
    let base = a.path().join("data/base");
    // seed, epochs and batch size come from the recorded config
    ok(
        b.path(),
        &[
            "--config",
            p(&a.path().join("train.json")),
            "train",
            "--data",
            p(&base),
            "--full",
        ],
    );
    let cfg = result(a.path(), "train");
    assert_eq!(cfg["full"], result(b.path(), "train")["full"]);
    assert_eq!(
        std::fs::read(a.path().join("train.sacw")).unwrap(),
        std::fs::read(b.path().join("train.sacw")).unwrap()
    );
}
