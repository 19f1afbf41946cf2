use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL_ARCH: &str = "arch=custom:conv4,pool4x4,fc8";

fn aenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aenet"))
        .args(["--jobs", "1"])
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = aenet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn digest(path: &Path) -> String {
    format!("{:x}", Sha256::digest(std::fs::read(path).unwrap()))
}

fn small_corpus(dir: &Path) {
    ok(dir, &["--seed", "3", "synth", "--out", "corpus", "--clips-per-class", "2"]);
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = aenet(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aenet(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(aenet(dir.path(), &["map", "--moments", "m.tsv"]).status.code(), Some(1));
    assert_eq!(aenet(dir.path(), &["--jobs", "0", "map", "--moments", "a", "--scores", "b"]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let out = aenet(dir.path(), &["train", "--manifest", "corpus/manifest.tsv", "--out-dir", "run", "colour=red"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    assert!(!dir.path().join("run/model.aen").exists());
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = aenet(dir.path(), &["map", "--moments", "nope.tsv", "--scores", "nope.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let arch = ["gradcheck", "--arch", "custom:conv4,pool2x2,fc8", "--frames", "20", "--samples", "50"];
    let out = ok(dir.path(), &arch);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max_rel_err"));
    let mil = [&arch[..], &["--aggregation", "noisy_or", "--batch", "4"]].concat();
    ok(dir.path(), &mil);
    let bad = [&arch[..], &["--corrupt", "1.01"]].concat();
    assert_eq!(aenet(dir.path(), &bad).status.code(), Some(3));
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let first = ok(
        dir.path(),
        &["--seed", "5", "train", "--manifest", "corpus/manifest.tsv", "--out-dir", "a", SMALL_ARCH, "epochs=2"],
    );
    let echoed = String::from_utf8_lossy(&first.stderr);
    assert!(echoed.contains("seed=5") && echoed.contains("epochs=2"));
    assert_eq!(std::fs::read_to_string(dir.path().join("a/config.txt")).unwrap().lines().count(), 20);

    ok(dir.path(), &["--config", "a/config.txt", "train", "--manifest", "corpus/manifest.tsv", "--out-dir", "b"]);
    for file in ["model.aen", "metrics.csv", "split.tsv", "config.txt"] {
        assert_eq!(digest(&dir.path().join("a").join(file)), digest(&dir.path().join("b").join(file)), "{file}");
    }
}

#[test]
fn eval_reports_accuracy_on_the_test_split() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let m = "corpus/manifest.tsv";
    ok(dir.path(), &["train", "--manifest", m, "--out-dir", "run", "--no-eval", SMALL_ARCH, "epochs=1"]);
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(metrics.lines().all(|l| !l.contains(",test,")));
    let out = ok(dir.path(), &["eval", "--manifest", m, "--checkpoint", "run/model.aen", "--split", "run/split.tsv"]);
    let report = String::from_utf8_lossy(&out.stdout).into_owned();
    let acc: f64 = report.lines().next().unwrap().split_whitespace().last().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    // 8 classes: one accuracy line plus the confusion rows.
    assert_eq!(report.lines().count(), 9);
}

#[test]
fn highlight_pipeline_prints_map() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let d = dir.path();
    ok(d, &["train", "--manifest", "corpus/manifest.tsv", "--out-dir", "run", "--no-eval", SMALL_ARCH, "epochs=1"]);
    ok(d, &["synth", "--highlight", "--out", "hl", "--videos", "4", "--moments", "4", "--positive-rate", "0.5"]);
    ok(d, &["extract", "--checkpoint", "run/model.aen", "--labels", "hl/labels.tsv", "--out", "hl/moments.tsv"]);
    ok(d, &["rank", "--moments", "hl/moments.tsv", "--out", "hl/scores.tsv", "--runs", "2", "--epochs", "20"]);
    let scores = std::fs::read_to_string(d.join("hl/scores.tsv")).unwrap();
    // Videos 2 and 3 are held out.
    assert_eq!(scores.lines().count(), 8);
    let out = ok(d, &["map", "--moments", "hl/moments.tsv", "--scores", "hl/scores.tsv"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let value: f64 = text.trim().strip_prefix("mAP ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&value));
}

#[test]
fn extract_writes_one_line_per_patch() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let d = dir.path();
    ok(d, &["train", "--manifest", "corpus/manifest.tsv", "--out-dir", "run", "--no-eval", SMALL_ARCH, "epochs=1"]);
    ok(d, &["extract", "--checkpoint", "run/model.aen", "--input", "corpus/clips", "--out", "feats.tsv"]);
    let feats = aenet::features::read_feature_file(&d.join("feats.tsv")).unwrap();
    assert!(feats.len() >= 16);
    for (_, f) in &feats {
        let norm = f.vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5 || norm == 0.0);
    }
}
