use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "preprocess.size=96",
    "--set", "preprocess.s_d=6",
    "--set", "esn.m=20",
    "--set", "esn.w_m=32",
    "--set", "rcap.w=16",
    "--set", "tlsa.w=20",
];

fn labelqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = labelqa(args);
    assert!(
        out.status.success(),
        "labelqa {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) -> String {
    let stack = dir.join("stack");
    let config = dir.join("synth.cfg");
    fs::write(&config, "synth.image_size = 96\nsynth.cyst_radius_range = 3, 6\n").unwrap();
    ok(&["--config", config.to_str().unwrap(), "--seed", "4", "synth", "--stack", stack.to_str().unwrap(), "--images", "12"]);
    stack.to_str().unwrap().to_string()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = SMALL.to_vec();
    v.extend_from_slice(args);
    v
}

#[test]
fn select_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let stack = synth(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let stdout = ok(&with_small(&["--seed", "7", "--out", out.to_str().unwrap(), "select", "--stack", &stack]));
        assert!(stdout.contains("decisions.jsonl"));
    }
    let da = fs::read(a.join("decisions.jsonl")).unwrap();
    assert!(!da.is_empty());
    assert_eq!(da, fs::read(b.join("decisions.jsonl")).unwrap());
    assert!(a.join("queue.json").is_file());
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    assert_eq!(fs::read(a.join("tables.txt")).unwrap(), fs::read(b.join("tables.txt")).unwrap());
}

#[test]
fn fit_then_predict_from_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let stack = synth(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let stdout = ok(&with_small(&["--out", out_s, "fit", "--stack", &stack, "--model", "paresn"]));
    assert!(stdout.contains("images_consumed"));
    let model = out.join("model.paresn");
    assert!(model.is_file());
    let stdout = ok(&with_small(&["--out", out_s, "predict", "--stack", &stack, "--model-file", model.to_str().unwrap()]));
    assert!(stdout.contains("7 images"), "{stdout}");
    assert!(out.join("proposals").join("synthetic_011.P2.png").is_file());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "predict");
    assert!(manifest["workers"].as_u64().unwrap() >= 1);
}

#[test]
fn evaluations_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let stack = synth(dir.path());
    let seg = dir.path().join("seg");
    let stdout = ok(&with_small(&["--out", seg.to_str().unwrap(), "eval-seg", "--stack", &stack, "--model", "baseline", "--reps", "3", "--train-label", "GT"]));
    assert!(stdout.contains("G1andG2"));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(seg.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["model_summary"]["fits"].as_array().unwrap().len(), 3);
    assert_eq!(metrics["rows"].as_array().unwrap().len(), 12);

    let rc = dir.path().join("rcap");
    ok(&with_small(&["--out", rc.to_str().unwrap(), "eval-rcap", "--stack", &stack, "--model", "baseline", "--kappa", "1,3", "--repetitions", "2"]));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(rc.join("metrics.json")).unwrap()).unwrap();
    let kappas: Vec<u64> = metrics["per_kappa"].as_array().unwrap().iter().map(|k| k["kappa"].as_u64().unwrap()).collect();
    assert_eq!(kappas, vec![1, 3]);
}

#[test]
fn preprocess_dumps_planes() {
    let dir = tempfile::tempdir().unwrap();
    let stack = synth(dir.path());
    let out = dir.path().join("out");
    ok(&with_small(&["--out", out.to_str().unwrap(), "preprocess", "--stack", &stack]));
    for suffix in ["base", "bh", "gm", "gd", "roi"] {
        assert!(out.join("planes").join(format!("synthetic_000.{suffix}.png")).is_file());
    }
}

#[test]
fn bad_input_fails_with_message() {
    let out = labelqa(&["--set", "bogus=1", "select"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let dir = tempfile::tempdir().unwrap();
    let out = labelqa(&["select", "--stack", dir.path().join("missing").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn serve_reports_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let stack = synth(dir.path());
    let out = dir.path().join("out");
    ok(&with_small(&["--out", out.to_str().unwrap(), "select", "--stack", &stack]));
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let res = labelqa(&["serve", "--queue", out.join("queue.json").to_str().unwrap(), "--port", &port]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("serving on"));
}
