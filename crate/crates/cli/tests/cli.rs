use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uwbhar::nn::{flop_count, param_count, NetworkSpec};

const TINY: &str = r#"
seed = 11

[dataset]
train_environments = [0, 1]
test_environments = [2]
train_per_class = 1
test_per_class = 1

[training]
epochs = 1
batch_size = 4

[bench]
runs = 20
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwbhar"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn uwbhar")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn params_totals_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["params"]);
    let spec = NetworkSpec::default();
    assert!(text.contains(&format!("total params {}", param_count(&spec))));
    assert!(text.contains(&format!("total flops {}", flop_count(&spec, (400, 60)))));
}

#[test]
fn simulate_preprocess_detect() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate"]);
    ok(dir.path(), &["preprocess"]);
    let text = ok(dir.path(), &["detect"]);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("window_start_frame, detected, peak_bin, peak_sd, threshold"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(", ").collect()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.len() == 5));
    assert!(rows.iter().any(|r| r[1] == "true"));
    assert!(dir.path().join("out/detections.txt").exists());
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[training]\nlerning_rate = 0.1\n").unwrap();
    let out = run(dir.path(), &["--config", bad.to_str().unwrap(), "params"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"));
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["preprocess", "--input", "absent.uwbf"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tiny_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let snapshot = |tag: &str| {
        ok(dir.path(), &["--config", &cfg, "featurize"]);
        let train = ok(dir.path(), &["--config", &cfg, "train"]);
        assert!(train.contains("epoch 1 loss"));
        ok(dir.path(), &["--config", &cfg, "eval"]);
        let out = dir.path().join("out");
        let files = ["weights.sanw", "metrics.json", "metrics.txt", "confusion.csv", "dataset/manifest.csv"];
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
        fs::rename(&out, dir.path().join(tag)).unwrap();
        bytes
    };
    let first = snapshot("a");
    let second = snapshot("b");
    assert_eq!(first, second);

    let manifest = fs::read_to_string(dir.path().join("a/dataset/manifest.csv")).unwrap();
    let sample = manifest.lines().nth(1).unwrap().split(',').next().unwrap();
    for entry in fs::read_dir(dir.path().join("a/dataset")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(dir.path().join("a/dataset").join(&name)).unwrap();
        let b = fs::read(dir.path().join("b/dataset").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }

    let weights = dir.path().join("a/weights.sanw");
    let sample = dir.path().join("a/dataset").join(sample);
    let text = ok(dir.path(), &["infer", "--input", sample.to_str().unwrap(), "--weights", weights.to_str().unwrap()]);
    assert_eq!(text.split_whitespace().count(), 8);
}

#[test]
fn bench_reports_latency() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let text = ok(dir.path(), &["--config", &cfg, "bench"]);
    assert!(text.contains("median"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/bench.json")).unwrap()).unwrap();
    assert_eq!(json["runs"], 20);
}
