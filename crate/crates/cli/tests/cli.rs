// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY_CONFIG: &str = r#"
seed = 3
epochs = 2
batch_size = 8

[data.synth]
subjects = 2
sessions = 3
segments_per_session = 3
channels = 2
windows = 4

[protocol]
kind = "fixed-session"
train_sessions = 2

[teacher]
features = 20
windows = 4
lstm_layers = 1
hidden = 25
groups = 2
higher_count = 3
higher_dim = 4
head = "classification"
routing_iters = 3

[sweep]
ladder = [[1, 16], [1, 9]]
fractions = [0.5, 1.0]
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("tiny.toml"), TINY_CONFIG).unwrap();
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Runs the binary with the workspace as output root.
    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_capsdistill"))
            .args(args)
            .current_dir(self.dir.path())
            .env("CAPSDISTILL_OUTPUT_ROOT", self.dir.path())
            .env("RUST_LOG", "error")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn pretrain(&self) {
        self.ok(&["train", "--phase", "pretrain", "--config", "tiny.toml", "--out", "pre"]);
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_writes_features_and_spec() {
    let ws = Workspace::new();
    let stdout = ws.ok(&["synth", "--subjects", "2", "--sessions", "2", "--segments", "2", "--channels", "3", "--out", "data"]);
    assert!(stdout.contains("L = 8, F = 30"), "{stdout}");
    assert!(ws.path("data/synth.json").is_file());
    let ftz = fs::read_dir(ws.path("data"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ftz"))
        .count();
    assert!(ftz > 0);
}

#[test]
fn raw_recordings_yield_620_features_for_62_channels() {
    let ws = Workspace::new();
    ws.ok(&["synth", "--raw", "--subjects", "1", "--sessions", "1", "--segments", "2", "--out", "raw"]);
    assert!(ws.path("raw/s000_r000.cdrw").is_file());
    assert!(ws.path("raw/s000_r000.labels.json").is_file());
    let stdout = ws.ok(&["features", "--input", "raw", "--out", "feat", "--no-preprocess"]);
    assert!(stdout.contains("wrote 2 segments from 1 recordings"), "{stdout}");
    assert!(stdout.contains("F = 620"), "{stdout}");
    assert!(ws.path("feat/s000_r000.ftz").is_file());
}

#[test]
fn csv_recording_is_preprocessed_and_segmented() {
    let ws = Workspace::new();
    let rows: Vec<String> = (0..4000)
        .map(|i| {
            let t = i as f64 / 1000.0;
            format!("{},{}", (2.0 * std::f64::consts::PI * 10.0 * t).sin(), (2.0 * std::f64::consts::PI * 20.0 * t).cos())
        })
        .collect();
    fs::write(ws.path("rec.csv"), rows.join("\n") + "\n").unwrap();
    let stdout = ws.ok(&["features", "--input", "rec.csv", "--out", "feat", "--windows", "2"]);
    assert!(stdout.contains("wrote 2 segments from 1 recordings"), "{stdout}");
    assert!(stdout.contains("L = 2, F = 20"), "{stdout}");
}

#[test]
fn empty_input_directory_is_an_input_error() {
    let ws = Workspace::new();
    fs::create_dir(ws.path("empty")).unwrap();
    let out = ws.run(&["features", "--input", "empty", "--out", "feat"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("no recordings found"), "{}", stderr(&out));
}

#[test]
fn missing_data_directory_is_an_input_error() {
    let ws = Workspace::new();
    let out = ws.run(&["train", "--phase", "pretrain", "--config", "tiny.toml", "--data", "nowhere"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn rerun_without_force_refuses_to_overwrite() {
    let ws = Workspace::new();
    let args = ["synth", "--subjects", "1", "--sessions", "1", "--segments", "1", "--channels", "2", "--out", "data"];
    ws.ok(&args);
    let out = ws.run(&args);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));
    let mut forced = args.to_vec();
    forced.push("--force");
    ws.ok(&forced);
}

#[test]
fn bad_configuration_is_a_config_error() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.toml"), "phase = \"pretrain\"\nunknown_key = 1\n").unwrap();
    let out = ws.run(&["train", "--config", "bad.toml"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));

    let out = ws.run(&["train", "--phase", "distill", "--config", "tiny.toml"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("--teacher"), "{}", stderr(&out));

    let out = ws.run(&["train", "--phase", "pretrain", "--config", "tiny.toml", "--protocol", "sideways"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn all_four_phases_chain_through_checkpoints() {
    let ws = Workspace::new();
    ws.pretrain();
    for name in ["manifest.json", "subject0.ckpt", "subject1.ckpt", "metrics_subject0.csv"] {
        assert!(ws.path("pre").join(name).is_file(), "{name}");
    }
    let header = fs::read_to_string(ws.path("pre/metrics_subject0.csv")).unwrap();
    assert!(header.starts_with("epoch,split,lr,l_u,l_v,l_task,l_total,accuracy,rmse,pcc\n"), "{header}");

    ws.ok(&["train", "--phase", "finetune", "--config", "tiny.toml", "--init", "pre", "--out", "ft"]);
    ws.ok(&["train", "--phase", "distill", "--config", "tiny.toml", "--teacher", "ft", "--out", "kd"]);
    ws.ok(&["train", "--phase", "scratch", "--config", "tiny.toml", "--out", "scratch"]);

    let manifest: serde_json::Value = serde_json::from_slice(&read(&ws.path("kd/manifest.json"))).unwrap();
    assert_eq!(manifest["plan"]["phase"], "distill");
    assert_eq!(manifest["outcomes"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["plan"]["student"]["hidden"], 16);
}

#[test]
fn eval_scores_a_checkpoint_on_feature_files() {
    let ws = Workspace::new();
    fs::write(ws.path("synth.toml"), "subjects = 2\nsessions = 3\nsegments_per_session = 3\nchannels = 2\nwindows = 4\n").unwrap();
    ws.ok(&["synth", "--config", "synth.toml", "--out", "data"]);
    ws.ok(&["train", "--phase", "pretrain", "--config", "tiny.toml", "--data", "data", "--out", "pre"]);
    let stdout = ws.ok(&["eval", "--checkpoint", "pre/subject0.ckpt", "--data", "data", "--subject", "0"]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc), "{stdout}");
    assert!(report["task_loss"].as_f64().unwrap().is_finite(), "{stdout}");
}

#[test]
fn architecture_mismatch_names_both_shapes() {
    let ws = Workspace::new();
    ws.pretrain();
    let other = TINY_CONFIG.replace("hidden = 25", "hidden = 36");
    fs::write(ws.path("other.toml"), other).unwrap();
    let out = ws.run(&["train", "--phase", "finetune", "--config", "other.toml", "--init", "pre", "--out", "ft"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("25") && err.contains("36"), "{err}");
}

#[test]
fn manifest_rerun_reproduces_metrics_bit_for_bit() {
    let ws = Workspace::new();
    ws.pretrain();
    ws.ok(&["train", "--manifest", "pre/manifest.json", "--out", "again"]);
    for name in ["metrics_subject0.csv", "metrics_subject1.csv", "subject0.ckpt", "subject1.ckpt"] {
        assert_eq!(read(&ws.path("pre").join(name)), read(&ws.path("again").join(name)), "{name}");
    }
}

#[test]
fn parallel_jobs_match_serial_output() {
    let ws = Workspace::new();
    ws.pretrain();
    ws.ok(&["--jobs", "2", "train", "--phase", "pretrain", "--config", "tiny.toml", "--out", "par"]);
    for name in ["metrics_subject0.csv", "metrics_subject1.csv", "subject1.ckpt"] {
        assert_eq!(read(&ws.path("pre").join(name)), read(&ws.path("par").join(name)), "{name}");
    }
}

#[test]
fn sweeps_write_stable_tables() {
    let ws = Workspace::new();
    ws.pretrain();
    ws.ok(&["sweep", "--kind", "size", "--teacher", "pre", "--config", "tiny.toml", "--out", "s1"]);
    ws.ok(&["sweep", "--kind", "size", "--teacher", "pre", "--config", "tiny.toml", "--out", "s2", "--jobs", "2"]);
    let first = read(&ws.path("s1/sweep_size.csv"));
    assert_eq!(first, read(&ws.path("s2/sweep_size.csv")));
    let text = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2, "{text}");
    assert!(lines[1].contains("distill") && lines[2].contains("scratch"), "{text}");

    ws.ok(&["sweep", "--kind", "fraction", "--teacher", "pre", "--config", "tiny.toml", "--out", "s1"]);
    let text = fs::read_to_string(ws.path("s1/sweep_fraction.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2, "{text}");
}

#[test]
fn output_root_comes_from_the_environment() {
    let ws = Workspace::new();
    let root = ws.path("elsewhere");
    fs::create_dir(&root).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_capsdistill"))
        .args(["synth", "--subjects", "1", "--sessions", "1", "--segments", "1", "--channels", "2", "--out", "d"])
        .current_dir(ws.dir.path())
        .env("CAPSDISTILL_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(root.join("d/synth.json").is_file());
    assert!(!ws.path("d").exists());
}
