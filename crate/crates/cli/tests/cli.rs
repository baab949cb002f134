use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn octopus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octopus"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn make_phantom(dir: &Path, seed: u64, frames: usize) {
    let out = octopus(&[
        "phantom",
        "--seed",
        &seed.to_string(),
        "--frames",
        &frames.to_string(),
        "--out",
        path(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn phantom_analyze_report() {
    let d = tempfile::tempdir().unwrap();
    let pb = d.path().join("pb");
    make_phantom(&pb, 5, 10);
    assert!(pb.join("meta.json").is_file());
    assert!(pb.join("truth.json").is_file());

    let out = octopus(&["analyze", path(&pb), "--roi", "1:8", "--mode", "baseline"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["labels.raw", "quant.csv", "lesions.csv", "report.json", "enface_angle.png"] {
        assert!(pb.join("analysis").join(f).is_file(), "{f}");
    }

    let out = octopus(&["report", path(&pb)]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("pullback random-5"), "{text}");
    assert!(text.contains("frames 1..=8"), "{text}");

    let out = octopus(&["report", path(&pb), "--json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["roi"]["start"], 1);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let pb = d.path().join("pb");
    make_phantom(&pb, 6, 4);

    // ROI past the end is a pipeline failure.
    let out = octopus(&["analyze", path(&pb), "--roi", "2:40"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // Truncated pixel data is a format error.
    let frames = pb.join("frames.raw");
    let bytes = fs::read(&frames).unwrap();
    fs::write(&frames, &bytes[..bytes.len() - 7]).unwrap();
    let out = octopus(&["analyze", path(&pb)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte"));

    // Malformed configuration is a format error too.
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"mode": "baseline", "unknown": 1}"#).unwrap();
    let out = octopus(&["analyze", path(&pb), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));

    let out = octopus(&["analyze", path(&pb), "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn register_with_landmarks() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    make_phantom(&a, 7, 6);
    make_phantom(&b, 8, 6);
    let out = octopus(&["register", "--ref", path(&a), "--float", path(&b), "--landmarks", "3,5:1,3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["offset_frames"], 2);
    assert_eq!(v["mode"], "landmark");
    let saved: Value = serde_json::from_slice(&fs::read(b.join("analysis/reg.json")).unwrap()).unwrap();
    assert_eq!(saved, v);

    let out = octopus(&["register", "--ref", path(&a), "--float", path(&b), "--landmarks", "3,50:1,3"]);
    assert_eq!(out.status.code(), Some(3));
    // Automatic mode needs analyses.
    let out = octopus(&["register", "--ref", path(&a), "--float", path(&b)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_loadable_models() {
    let d = tempfile::tempdir().unwrap();
    let corpus = d.path().join("corpus.json");
    fs::write(
        &corpus,
        r#"{"seeds": [3], "phantom": {"n_frames": 4, "struts_per_frame": 8, "lesions": 1}, "model_seed": 1}"#,
    )
    .unwrap();
    let out_dir = d.path().join("models");
    let out = octopus(&["train", "--corpus", path(&corpus), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let pb = d.path().join("pb");
    let out = octopus(&["phantom", "--seed", "9", "--frames", "3", "--struts", "6", "--out", path(&pb)]);
    assert!(out.status.success());
    let cfg = d.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"mode": "stent_analysis", "models": {{"detector": "{}", "coverage": "{}"}}}}"#,
            path(&out_dir.join("detector.octm")),
            path(&out_dir.join("coverage.octm"))
        ),
    )
    .unwrap();
    let out = octopus(&["analyze", path(&pb), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pb.join("analysis/struts.csv").is_file());
}
