//! The command-line surface: transcripts, exit codes and subcommands.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use synthpipe::cli::{main_with, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE};
use synthpipe::store::load_manifest;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("synthpipe").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest_line(stdout: &str) -> PathBuf {
    let line = stdout.lines().find(|l| l.starts_with("manifest ")).expect("manifest line");
    PathBuf::from(line.trim_start_matches("manifest "))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_transcript_is_golden_and_stable() {
    let config = mock_config_path();
    let mut transcripts = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let o = cli(&["run", "--config", s(&config), "--label", "red panda", "--seed", "42", "--out", s(dir.path())]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
        let manifest = manifest_line(&o.stdout);
        assert!(manifest.exists());
        let stdout = o.stdout.replace(s(dir.path()), "<out>");
        transcripts.push(format!("== stderr\n{}== stdout\n{stdout}", o.stderr));
    }
    assert_eq!(transcripts[0], transcripts[1]);
    check_golden("run_mock.transcript", &transcripts[0]).unwrap();
    for line in transcripts[0].lines().filter(|l| l.starts_with("stage=")) {
        assert!(line.contains(" iteration=") && line.contains(" scene="), "{line}");
    }
}

#[test]
fn binary_runs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_synthpipe"))
        .args(["run", "--config", s(&mock_config_path()), "--out", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert!(manifest_line(&stdout).exists());
    assert!(String::from_utf8(status.stderr).unwrap().contains("stage=gate"));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "label = \"dog\"\n\n[thresholds]\npsnr_minimum = 20.0\n");
    let o = cli(&["run", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("psnr_minimum"), "{}", o.stderr);
    assert!(o.stderr.contains("run.toml:4:1"), "{}", o.stderr);

    let cfg = write_config(dir.path(), "label = \"dog\"\niterations = 0\n");
    let o = cli(&["run", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("run.toml:2") && o.stderr.contains("iterations"), "{}", o.stderr);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(cli(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(cli(&["run"]).code, EXIT_USAGE);
    let help = cli(&["--help"]);
    assert_eq!(help.code, EXIT_OK);
    for sub in ["run", "inspect", "export"] {
        assert!(help.stdout.contains(sub));
    }
}

#[test]
fn unreachable_backend_mid_run_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let cfg = write_config(
        dir.path(),
        &format!(
            "label = \"red panda\"\nseed = 42\n[endpoints.instruct_edit]\nurl = \"http://127.0.0.1:{port}\"\nmax_retries = 0\ntimeout_secs = 2\n"
        ),
    );
    let o = cli(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("store"))]);
    assert_eq!(o.code, EXIT_PARTIAL, "{}{}", o.stdout, o.stderr);
    assert!(o.stdout.contains("complete           false"), "{}", o.stdout);
    let m = load_manifest(&manifest_line(&o.stdout)).unwrap();
    assert!(!m.complete);
    assert!(m.failure.as_deref().unwrap().contains("instruct_edit"), "{:?}", m.failure);
    assert_eq!(m.records.len(), 1, "the init record survives");

    let export = cli(&["export", s(&manifest_line(&o.stdout)), s(&dir.path().join("x.json"))]);
    assert_eq!(export.code, EXIT_PARTIAL);
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn inspect_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let run = cli(&["run", "--config", s(&mock_config_path()), "--out", s(dir.path())]);
    assert_eq!(run.code, EXIT_OK);
    let manifest = manifest_line(&run.stdout);
    let m = load_manifest(&manifest).unwrap();
    let init = m.records.iter().find(|r| r.scene.is_none()).unwrap();
    let scene = m.records.iter().find(|r| r.scene.is_some()).unwrap();

    let o = cli(&["inspect", s(&manifest), &init.id]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let steps: Vec<&str> = o.stdout.lines().filter(|l| l.starts_with("  ") && l.contains(". ")).collect();
    assert_eq!(steps.len(), 1);
    assert!(steps[0].contains("1. init prompt="));
    assert!(o.stdout.contains("(ok)"));
    assert!(o.stdout.contains("quality verdict=Retain"));

    let o = cli(&["inspect", s(&manifest), &scene.id]);
    assert_eq!(o.code, EXIT_OK);
    let steps: Vec<&str> = o
        .stdout
        .lines()
        .filter_map(|l| l.trim_start().split_once(". ").map(|(_, rest)| rest))
        .filter(|rest| rest.starts_with("init") || rest.starts_with("background_edit") || rest.starts_with("object_fill"))
        .collect();
    assert!(steps[0].starts_with("init"));
    assert!(steps[1].starts_with("background_edit"));
    assert!(steps.len() > 2 && steps[2..].iter().all(|s| s.starts_with("object_fill")));
    for obj in &scene.annotations.objects {
        assert!(o.stdout.contains(&format!("{:?}", obj.label)));
    }
    assert!(o.stdout.contains(&scene.annotations.caption));

    let o = cli(&["inspect", s(&manifest), "feedface"]);
    assert_eq!(o.code, EXIT_USAGE);
    for r in &m.records {
        assert!(o.stderr.contains(&r.id), "{}", o.stderr);
    }

    let summary = cli(&["inspect", s(&manifest)]);
    assert_eq!(summary.code, EXIT_OK);
    assert!(summary.stdout.contains("records retained   3"));

    let dest = dir.path().join("exports/coco.json");
    let o = cli(&["export", s(&manifest), s(&dest)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&dest).unwrap()).unwrap();
    assert_eq!(doc["images"].as_array().unwrap().len(), 3);
    assert_eq!(doc["info"]["run_hash"], m.run_hash.as_str());
}

#[test]
fn tampered_manifest_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let run = cli(&["run", "--config", s(&mock_config_path()), "--out", s(dir.path())]);
    let manifest = manifest_line(&run.stdout);
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replacen("red panda", "red pandas", 1)).unwrap();
    let o = cli(&["inspect", s(&manifest)]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("hash mismatch"), "{}", o.stderr);
}
