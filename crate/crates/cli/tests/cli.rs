use std::path::Path;
use std::process::{Command, Output};

fn afflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afflow"))
        .current_dir(dir)
        .args(args)
        .env("AFFLOW_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = afflow(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key:?} in {text}"));
    line[key.len()..].trim().trim_end_matches('%').parse().unwrap()
}

fn small_dataset(dir: &Path, scenario: &str, name: &str, seed: &str, count: &str) {
    ok(dir, &["generate", "--scenario", scenario, "--seed", seed, "--size", "16", "--cells", "6", "--count", count, "--out", name]);
}

#[test]
fn generate_is_deterministic_and_lists_three_files_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--scenario", "lines", "--seed", "9", "--size", "16", "--out", "a"]);
    ok(d, &["generate", "--scenario", "lines", "--seed", "9", "--size", "16", "--out", "b"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("a/manifest.json")).unwrap()).unwrap();
    let images = manifest["images"].as_array().unwrap();
    assert_eq!(images.len(), 5);
    for entry in images {
        for key in ["clean", "noisy", "truth"] {
            let name = entry[key].as_str().unwrap();
            assert_eq!(std::fs::read(d.join("a").join(name)).unwrap(), std::fs::read(d.join("b").join(name)).unwrap());
        }
    }
    assert_eq!(std::fs::read(d.join("a/manifest.json")).unwrap(), std::fs::read(d.join("b/manifest.json")).unwrap());
}

#[test]
fn generate_errors_on_unwritable_path_and_missing_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("file"), b"x").unwrap();
    let out = afflow(d, &["generate", "--scenario", "lines", "--size", "8", "--out", "file/sub"]);
    assert_eq!(out.status.code(), Some(2));
    let out = afflow(d, &["generate", "--size", "8", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_calibrates_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let text = ok(d, &["generate", "--scenario", "colors", "--size", "24", "--count", "2", "--calibrate", "50", "--out", "c"]);
    let noise = value_after(&text, "calibrated noise");
    assert!(noise > 0.3 && noise < 1.2, "{noise}");
}

#[test]
fn train_writes_trace_and_resumes_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "colors", "data", "1", "2");
    std::fs::write(d.join("cfg.json"), r#"{"train": {"max_iters": 6, "checkpoint_every": 4}}"#).unwrap();
    ok(d, &["train", "--data", "data", "--config", "cfg.json", "--out", "full.omega"]);
    let full = std::fs::read_to_string(d.join("full.csv")).unwrap();
    assert!(full.starts_with("iteration,loss,wrong_pct"));
    assert_eq!(full.lines().count(), 8);
    assert!(d.join("full.ckpt.omega").exists());

    std::fs::copy(d.join("full.csv"), d.join("resumed.csv")).unwrap();
    ok(d, &["train", "--data", "data", "--config", "cfg.json", "--out", "resumed.omega", "--resume", "full.ckpt.omega"]);
    let resumed = std::fs::read_to_string(d.join("resumed.csv")).unwrap();
    assert_eq!(resumed.lines().count(), 8);
    let iterations: Vec<&str> = resumed.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["0", "1", "2", "3", "4", "5", "6"]);
}

#[test]
fn train_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "lines", "data", "2", "1");
    for name in ["a.omega", "b.omega"] {
        ok(d, &["train", "--data", "data", "--max-iters", "3", "--out", name]);
    }
    assert_eq!(std::fs::read(d.join("a.omega")).unwrap(), std::fs::read(d.join("b.omega")).unwrap());
}

#[test]
fn bad_configs_exit_2_and_numeric_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "colors", "data", "3", "1");
    std::fs::write(d.join("typo.json"), r#"{"train": {"stepsize": 0.1}}"#).unwrap();
    let out = afflow(d, &["train", "--data", "data", "--config", "typo.json", "--out", "x.omega"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("neg.json"), r#"{"train": {"tau": -1}}"#).unwrap();
    let out = afflow(d, &["train", "--data", "data", "--config", "neg.json", "--out", "x.omega"]);
    assert_eq!(out.status.code(), Some(2));
    let out = afflow(d, &["train", "--data", "missing", "--out", "x.omega"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("nan.json"), r#"{"train": {"t": 1e6, "max_iters": 2}}"#).unwrap();
    let out = afflow(d, &["train", "--data", "data", "--config", "nan.json", "--out", "x.omega"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!d.join("x.omega").exists());
}

#[test]
fn label_is_idempotent_and_reports_uniform_degradation_on_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--scenario", "lines", "--seed", "4", "--size", "48", "--count", "1", "--out", "data"]);
    let text = ok(d, &["label", "--image", "data/noisy_000.ppm", "--uniform", "--out", "a.pgm"]);
    ok(d, &["label", "--image", "data/noisy_000.ppm", "--uniform", "--out", "b.pgm"]);
    assert_eq!(std::fs::read(d.join("a.pgm")).unwrap(), std::fs::read(d.join("b.pgm")).unwrap());
    let wrong = value_after(&text, "wrong pixels");
    assert!(wrong > 5.0, "uniform weights should erase thin lines, got {wrong}%");
    let pgm = std::fs::read(d.join("a.pgm")).unwrap();
    let header = b"P5\n48 48\n255\n";
    assert!(pgm.starts_with(header));
    assert!(pgm[header.len()..].iter().all(|&l| l <= 1));
}

#[test]
fn label_uses_trained_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "colors", "data", "5", "1");
    ok(d, &["train", "--data", "data", "--max-iters", "10", "--out", "w.omega"]);
    let uniform = value_after(&ok(d, &["label", "--image", "data/noisy_000.ppm", "--uniform", "--out", "u.pgm"]), "wrong pixels");
    let trained = value_after(&ok(d, &["label", "--image", "data/noisy_000.ppm", "--weights", "w.omega", "--out", "t.pgm"]), "wrong pixels");
    assert!(trained < uniform, "{trained} vs {uniform}");
    let out = afflow(d, &["label", "--image", "data/noisy_000.ppm", "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grad_check_prints_agreement_for_both_references() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let dense = ok(d, &["grad-check", "--size", "8", "--labels", "3", "--seed", "1", "--mode", "dense"]);
    assert!(value_after(&dense, "fraction") >= 0.99, "{dense}");
    let fd = ok(d, &["--threads", "1", "grad-check", "--size", "6", "--labels", "2", "--seed", "2", "--mode", "fd"]);
    assert!(value_after(&fd, "fraction") >= 0.99, "{fd}");
    assert_eq!(afflow(d, &["grad-check", "--mode", "exact"]).status.code(), Some(2));
    assert_eq!(afflow(d, &["grad-check", "--labels", "1"]).status.code(), Some(2));
}

#[test]
fn predictor_round_trip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "lines", "train", "6", "2");
    small_dataset(d, "lines", "val", "60", "1");
    ok(d, &["predict-train", "--data", "train", "--val", "val", "--steps", "3", "--prototypes", "6", "--out", "m.pred"]);
    assert!(d.join("m.pred").exists());
    let trace = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert!(trace.lines().next().unwrap().contains("val_wrong_pct"));
    assert!(trace.lines().count() >= 2);
    let text = ok(d, &["predict", "--model", "m.pred", "--image", "val/noisy_000.ppm", "--out", "p.pgm", "--weights-out", "p.omega"]);
    assert!(text.contains("wrong pixels"));
    assert!(d.join("p.pgm").exists() && d.join("p.omega").exists());
    ok(d, &["label", "--image", "val/noisy_000.ppm", "--weights", "p.omega", "--out", "q.pgm"]);
    assert_eq!(std::fs::read(d.join("p.pgm")).unwrap(), std::fs::read(d.join("q.pgm")).unwrap());
}
