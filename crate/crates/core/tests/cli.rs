use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "generator": { "n_scenes": 20 },
  "pos_enc": { "d_model": 2 },
  "train": {
    "epochs": 1,
    "batch_size": 4,
    "max_steps": 3,
    "imitator": { "widths": [4, 8], "downsample": 2 }
  },
  "sim": { "horizon": 60 }
}"#;

fn imitsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imitsim"))
        .current_dir(dir)
        .env_remove("IMITSIM_OUT_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = imitsim(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    dir
}

fn read(dir: &Path, p: &str) -> Vec<u8> {
    std::fs::read(dir.join(p)).unwrap_or_else(|e| panic!("{p}: {e}"))
}

#[test]
fn gen_is_reproducible_and_tagged() {
    let d = setup();
    let p = d.path();
    ok(p, &["gen", "--config", "cfg.json", "--seed", "7", "--n", "30", "--out", "a/scenes.jsonl"]);
    ok(p, &["gen", "--config", "cfg.json", "--seed", "7", "--n", "30", "--out", "b/scenes.jsonl"]);
    assert_eq!(read(p, "a/scenes.jsonl"), read(p, "b/scenes.jsonl"));
    let text = String::from_utf8(read(p, "a/scenes.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 30);
    let meta: serde_json::Value = serde_json::from_slice(&read(p, "a/scenes.jsonl.meta.json")).unwrap();
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 16);
    assert!(p.join("a/config.resolved.json").exists());
    ok(p, &["gen", "--config", "cfg.json", "--seed", "8", "--n", "30", "--out", "c/scenes.jsonl"]);
    assert_ne!(read(p, "a/scenes.jsonl"), read(p, "c/scenes.jsonl"));
}

#[test]
fn out_root_relocates_outputs() {
    let d = setup();
    let root = d.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_imitsim"))
        .current_dir(d.path())
        .env("IMITSIM_OUT_ROOT", &root)
        .args(["gen", "--config", "cfg.json", "--n", "3", "--out", "s.jsonl"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("s.jsonl").exists());
}

#[test]
fn eval_of_targets_against_themselves_is_perfect() {
    let d = setup();
    let p = d.path();
    ok(p, &["gen", "--config", "cfg.json", "--out", "scenes.jsonl"]);
    ok(p, &["detect", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--source", "proxy", "--split", "all", "--out", "proxy.jsonl"]);
    ok(p, &["eval", "--config", "cfg.json", "--preds", "proxy.jsonl", "--targets", "proxy.jsonl", "--out", "self.json", "--csv", "self.csv"]);
    let rep: serde_json::Value = serde_json::from_slice(&read(p, "self.json")).unwrap();
    assert_eq!(rep["map_050"].as_f64().unwrap(), 1.0);
    assert!(String::from_utf8(read(p, "self.csv")).unwrap().lines().count() > 1);
}

#[test]
fn full_pipeline_and_report() {
    let d = setup();
    let p = d.path();
    ok(p, &["gen", "--config", "cfg.json", "--out", "scenes.jsonl"]);
    ok(p, &["rasterize", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--ids", "0,1", "--out", "raster"]);
    assert!(p.join("raster/scene_00001_occlusion.pgm").exists());
    ok(p, &["fit-baseline", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--out", "baseline.json"]);
    ok(p, &["train", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--out", "run"]);
    for f in ["best.ckpt", "last.ckpt", "train_log.jsonl", "timing.jsonl", "split.json", "meta.json"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }
    let mut reports = Vec::new();
    ok(p, &["detect", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--source", "proxy", "--out", "t.jsonl"]);
    for (src, extra) in [
        ("imitator", vec!["--checkpoint", "run/best.ckpt"]),
        ("gaussian", vec!["--baseline", "baseline.json"]),
        ("multimodal", vec!["--baseline", "baseline.json"]),
    ] {
        let dets = format!("{src}.jsonl");
        let mut args = vec!["detect", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--source", src, "--out", &dets];
        args.extend(extra);
        ok(p, &args);
        let rep = format!("{src}.json");
        ok(p, &["eval", "--config", "cfg.json", "--preds", &dets, "--targets", "t.jsonl", "--out", &rep]);
        reports.push(rep);
    }
    ok(p, &["render", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--id", "0", "--dets", "imitator.jsonl", "--out", "r.ppm"]);
    assert!(read(p, "r.ppm").starts_with(b"P6\n112 96\n255\n"));
    let mut args = vec!["report", "--out", "table.md", "--reports"];
    args.extend(reports.iter().map(String::as_str));
    let out = ok(p, &args);
    let table = String::from_utf8(out.stdout).unwrap();
    for row in ["| imitator |", "| gaussian |", "| multimodal |"] {
        assert!(table.contains(row), "{table}");
    }
}

#[test]
fn report_refuses_mixed_configs() {
    let d = setup();
    let p = d.path();
    ok(p, &["gen", "--config", "cfg.json", "--out", "scenes.jsonl"]);
    ok(p, &["detect", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--source", "annotation", "--out", "a.jsonl"]);
    ok(p, &["eval", "--config", "cfg.json", "--preds", "a.jsonl", "--targets", "a.jsonl", "--out", "one.json"]);
    ok(p, &["eval", "--config", "cfg.json", "--seed", "99", "--preds", "a.jsonl", "--targets", "a.jsonl", "--out", "two.json"]);
    let out = imitsim(p, &["report", "--reports", "one.json", "two.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible() {
    let d = setup();
    let p = d.path();
    ok(p, &["simulate", "--config", "cfg.json", "--perception", "proxy", "--episodes", "3", "--out", "s1"]);
    ok(p, &["simulate", "--config", "cfg.json", "--perception", "proxy", "--episodes", "3", "--out", "s2"]);
    assert_eq!(read(p, "s1/episodes.jsonl"), read(p, "s2/episodes.jsonl"));
    assert_eq!(read(p, "s1/summary.json"), read(p, "s2/summary.json"));
    let s: serde_json::Value = serde_json::from_slice(&read(p, "s1/summary.json")).unwrap();
    assert_eq!(s["episodes"], 3);
}

#[test]
fn train_is_reproducible() {
    let d = setup();
    let p = d.path();
    ok(p, &["gen", "--config", "cfg.json", "--out", "scenes.jsonl"]);
    ok(p, &["train", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--out", "r1"]);
    ok(p, &["train", "--config", "cfg.json", "--scenes", "scenes.jsonl", "--out", "r2"]);
    for f in ["best.ckpt", "last.ckpt", "train_log.jsonl", "val_log.jsonl", "split.json"] {
        assert_eq!(read(p, &format!("r1/{f}")), read(p, &format!("r2/{f}")), "{f}");
    }
}

#[test]
fn failures_exit_with_json_error() {
    let d = setup();
    let p = d.path();
    let out = imitsim(p, &["train", "--scenes", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
    std::fs::write(p.join("bad.json"), r#"{"seeed": 3}"#).unwrap();
    let out = imitsim(p, &["gen", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    let out = imitsim(p, &["simulate", "--perception", "imitator"]);
    assert_eq!(out.status.code(), Some(1));
    let out = imitsim(p, &["gen", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}
