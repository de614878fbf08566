//! End-to-end runs of the `vitlab` binary on a small synthetic config.

use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = r#"{
  "dataset": {"kind": "synthetic", "n_per_class": 10, "n_classes": 10, "size": 16, "test_per_class": 3},
  "model": {"depth": 2},
  "optim": {"max_epochs": 2, "warmup_epochs": 1},
  "eval_samples": 16
}"#;

fn vitlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn vitlab")
}

fn write_quick(dir: &Path) -> String {
    let p = dir.join("quick.json");
    std::fs::write(&p, QUICK).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_analyze_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = vitlab(&["train", "--config", &cfg, "--condition", "baseline", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let hist = std::fs::read(a.join("history.csv")).unwrap();
    assert_eq!(hist, std::fs::read(b.join("history.csv")).unwrap());
    assert_eq!(String::from_utf8(hist).unwrap().lines().count(), 3);
    let resolved = std::fs::read_to_string(a.join("config.json")).unwrap();
    assert!(resolved.contains("\"tool_version\"") && resolved.contains("\"baseline\""));

    let ck = a.join("best.ckpt");
    let o = vitlab(&["analyze", "--config", &cfg, "--checkpoint", s(&ck), "--n", "999", "--out", s(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(a.join("head_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_images"], 30);

    let rep = dir.path().join("rep");
    let o = vitlab(&["report", s(&a), "--out", s(&rep)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scatter = std::fs::read_to_string(rep.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 8);
    assert!(rep.join("manifest.json").is_file());
}

#[test]
fn resuming_a_finished_run_keeps_its_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick(dir.path());
    let full = dir.path().join("full");
    assert!(vitlab(&["train", "--config", &cfg, "--out", s(&full)]).status.success());

    let part = dir.path().join("part");
    assert!(vitlab(&["train", "--config", &cfg, "--out", s(&part)]).status.success());
    assert!(vitlab(&["train", "--config", &cfg, "--out", s(&part), "--resume"]).status.success());
    assert_eq!(
        std::fs::read(full.join("history.csv")).unwrap(),
        std::fs::read(part.join("history.csv")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick(dir.path());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"heads": 5}}"#).unwrap();
    let out = dir.path().join("never");
    let o = vitlab(&["train", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists(), "config errors must precede any IO");
    assert_eq!(vitlab(&["train", "--condition", "+everything"]).status.code(), Some(2));
    assert_eq!(vitlab(&["bogus"]).status.code(), Some(2));

    let run = dir.path().join("run");
    assert!(vitlab(&["train", "--config", &cfg, "--out", s(&run)]).status.success());
    let wide = dir.path().join("wide.json");
    std::fs::write(
        &wide,
        QUICK.replace("\"size\": 16", "\"size\": 24").replace("\"model\": {\"depth\": 2}", "\"model\": {\"depth\": 2, \"image_size\": 24}"),
    )
    .unwrap();
    let ck = run.join("best.ckpt");
    let o = vitlab(&["analyze", "--config", s(&wide), "--checkpoint", s(&ck), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "dataset,condition,layer\n").unwrap();
    let o = vitlab(&["report", s(&broken), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"head\""));
}
