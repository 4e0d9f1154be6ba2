//! End-to-end tests through the compiled binary: exit-code policy, report
//! output, and subcommand composition.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/corpus")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_repro-audit"))
}

fn corpus_args(root: &Path) -> Vec<String> {
    let corpus = corpus_dir();
    let projects = ["allpass", "badpath", "misspkg"]
        .iter()
        .map(|p| corpus.join(p).display().to_string())
        .collect::<Vec<_>>()
        .join(",");
    vec![
        "--projects".into(),
        projects,
        "--cache-dir".into(),
        root.join("cache").display().to_string(),
        "--staging-dir".into(),
        root.join("staging").display().to_string(),
        "--out".into(),
        root.join("out").display().to_string(),
        "--dry-run".into(),
        "--dry-run-outcomes".into(),
        corpus.join("outcomes.json").display().to_string(),
    ]
}

fn run(args: &[String], subcommand: &str) -> Output {
    let mut full: Vec<String> = args.to_vec();
    full.push(subcommand.to_string());
    bin().args(&full).output().expect("binary runs")
}

#[test]
fn pipeline_dry_run_exits_zero_with_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&corpus_args(dir.path()), "pipeline");
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout is the JSON report");
    assert_eq!(report["schema"], 1);
    assert_eq!(report["totals"]["projects"], 3);
    assert_eq!(report["totals"]["success"], 1);
    assert_eq!(report["totals"]["failed"], 2);
    // Script failures are data: exit 0 even though two scripts failed.
}

#[test]
fn markdown_format_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = corpus_args(dir.path());
    args.extend(["--format".to_string(), "md".to_string()]);
    let out = run(&args, "pipeline");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("# Reproducibility Audit Report"));
    assert!(text.contains("| Dependency file |") || text.contains("Dependency file"));
}

#[test]
fn config_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // cache and staging collide.
    let corpus = corpus_dir();
    let out = bin()
        .args([
            "--projects",
            &corpus.join("allpass").display().to_string(),
            "--cache-dir",
            &dir.path().join("same").display().to_string(),
            "--staging-dir",
            &dir.path().join("same").display().to_string(),
            "--out",
            &dir.path().join("out").display().to_string(),
            "--dry-run",
            "pipeline",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn bad_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("audit.conf");
    std::fs::write(&cfg_path, "not_a_real_key = 1\n").unwrap();
    let out = bin()
        .args([
            "--config",
            &cfg_path.display().to_string(),
            "pipeline",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subcommand_sequence_matches_pipeline() {
    let whole = tempfile::tempdir().unwrap();
    let composed = tempfile::tempdir().unwrap();

    let out = run(&corpus_args(whole.path()), "pipeline");
    assert!(out.status.success());

    let args = corpus_args(composed.path());
    for subcommand in [
        "fetch", "scan", "infer", "spec", "build", "exec", "classify", "report",
    ] {
        let out = run(&args, subcommand);
        assert!(
            out.status.success(),
            "{subcommand} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    let a = std::fs::read_to_string(whole.path().join("out/report.json")).unwrap();
    let b = std::fs::read_to_string(composed.path().join("out/report.json")).unwrap();
    assert_eq!(a, b, "pipeline and composed subcommands diverge");
}

#[test]
fn fetch_summary_lists_projects() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&corpus_args(dir.path()), "fetch");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("fetched 3 project(s)"));
    assert!(text.contains("allpass: 1 files, 1 R script(s)"));
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir();
    let cfg_path = dir.path().join("audit.conf");
    std::fs::write(
        &cfg_path,
        format!(
            "projects = {}\ncache_dir = {}\nstaging_dir = {}\noutput_dir = {}\ndry_run = true\ndry_run_outcomes = {}\n",
            corpus.join("misspkg").display(),
            dir.path().join("cache").display(),
            dir.path().join("staging").display(),
            dir.path().join("out").display(),
            corpus.join("outcomes.json").display(),
        ),
    )
    .unwrap();
    let out = bin()
        .args(["--config", &cfg_path.display().to_string(), "pipeline"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["totals"]["projects"], 1);
    assert_eq!(report["totals"]["failed"], 1);
}
