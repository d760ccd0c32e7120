use std::path::Path;
use std::process::{Command, Output};

fn wvn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wvn")).args(args).output().expect("spawn wvn")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const PARK: &str = "[run]\nworld = \"builtin:park\"\nsteps = 40\n\n[segmentation]\nn_segments = 32\nmin_cells = 4\n";

#[test]
fn demo_then_eval_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), PARK);
    let demo = dir.path().join("demo");
    let out = wvn(&["demo", "--config", &config, "--out", demo.to_str().unwrap(), "--deterministic", "--steps", "30"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("demo:"));
    let csv = std::fs::read_to_string(demo.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
    for name in ["checkpoint.wvn", "mission.jsonl", "manifest.json", "report.json"] {
        assert!(demo.join(name).is_file(), "missing {name}");
    }

    let ckpt = demo.join("checkpoint.wvn");
    let gate = |min: f64| {
        let body = format!("{PARK}\n[eval]\ncheckpoint = {:?}\nmin_gt_accuracy = {min}\n", ckpt.to_str().unwrap());
        let config = write_config(dir.path(), &body);
        wvn(&["eval", "--config", &config, "--out", dir.path().join("eval").to_str().unwrap()])
    };
    assert_eq!(gate(0.0).status.code(), Some(0));
    assert_eq!(gate(100.5).status.code(), Some(2));
}

#[test]
fn bad_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = wvn(&["demo", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("wvn:"));

    let config = write_config(dir.path(), "[run]\nworld = \"builtin:nowhere\"\n");
    let out = wvn(&["demo", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let out = wvn(&["fly", "--config", &config]);
    assert!(!out.status.success());
}
