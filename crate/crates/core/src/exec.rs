//! Container build and execution orchestration. One image per project, one
//! fresh container per script, no network inside containers by default, and
//! a hard wall-clock limit per script with container teardown on overrun.
//!
//! The container runtime and the image builder are both driven through
//! their command-line interfaces, so tests can substitute stub executables.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Marker appended to a log when the wall-clock limit fires; the built-in
/// pattern table maps it to the execution_timeout initial type.
pub const TIMEOUT_MARKER: &str = "[repro-audit] execution timed out after";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildStatus {
    Built,
    BuildFailed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildRecord {
    pub project_id: String,
    pub status: BuildStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_tag: Option<String>,
    pub build_log: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    Failed,
    Timeout,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub project_id: String,
    pub script: String,
    pub status: ExecStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    /// Interleaved stdout+stderr (merged inside the container shell).
    pub log: String,
    pub duration_s: f64,
    /// True for records fabricated by the dry-run executor.
    pub synthetic: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ExecLimits {
    pub timeout_s: u64,
    pub mem_mb: u64,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            timeout_s: 1800,
            mem_mb: 4096,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("no container runtime available")]
    RuntimeUnavailable,
    #[error("container launch failed: {0}")]
    ContainerLaunchError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A detected container runtime (docker-compatible CLI).
#[derive(Debug, Clone)]
pub struct ContainerRuntime {
    pub binary: String,
    /// Allow network inside script containers (off by default).
    pub allow_network: bool,
}

impl ContainerRuntime {
    /// Probe for a working runtime by running `<bin> info`.
    pub fn detect() -> Option<Self> {
        for bin in ["docker", "podman"] {
            let ok = Command::new(bin)
                .arg("info")
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .map(|s| s.success())
                .unwrap_or(false);
            if ok {
                return Some(Self {
                    binary: bin.to_string(),
                    allow_network: false,
                });
            }
        }
        None
    }

    pub fn with_binary(binary: &str) -> Self {
        Self {
            binary: binary.to_string(),
            allow_network: false,
        }
    }
}

/// How to build images. The command template runs with `{tag}` and `{dir}`
/// substituted; the default drives repo2docker.
#[derive(Debug, Clone)]
pub struct BuilderConfig {
    pub command: Vec<String>,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            command: vec![
                "jupyter-repo2docker".to_string(),
                "--no-run".to_string(),
                "--image-name".to_string(),
                "{tag}".to_string(),
                "{dir}".to_string(),
            ],
        }
    }
}

pub fn image_tag_for(project_id: &str) -> String {
    let slug: String = project_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    format!("repro-audit/{slug}")
}

/// Build the image for a staged project directory. The full builder output
/// is captured regardless of outcome; a missing runtime yields a skipped
/// record so downstream statuses become not_run rather than failed.
pub fn build_image(
    runtime: Option<&ContainerRuntime>,
    builder: &BuilderConfig,
    staged_project: &Path,
    project_id: &str,
    timeout: Duration,
) -> BuildRecord {
    let started = Instant::now();
    if runtime.is_none() {
        return BuildRecord {
            project_id: project_id.to_string(),
            status: BuildStatus::Skipped,
            image_tag: None,
            build_log: "no container runtime available; build skipped".to_string(),
            duration_s: 0.0,
        };
    }
    let tag = image_tag_for(project_id);
    let argv: Vec<String> = builder
        .command
        .iter()
        .map(|a| {
            a.replace("{tag}", &tag)
                .replace("{dir}", &staged_project.display().to_string())
        })
        .collect();
    let (status, log) = match run_captured(&argv, timeout, None) {
        Ok((Some(0), log)) => (BuildStatus::Built, log),
        Ok((code, log)) => {
            let mut log = log;
            if code.is_none() {
                log.push_str(&format!("\n{TIMEOUT_MARKER} {}s; build aborted\n", timeout.as_secs()));
            }
            (BuildStatus::BuildFailed, log)
        }
        Err(e) => (BuildStatus::BuildFailed, format!("builder failed to start: {e}")),
    };
    BuildRecord {
        project_id: project_id.to_string(),
        status,
        image_tag: (status == BuildStatus::Built).then_some(tag),
        build_log: log,
        duration_s: started.elapsed().as_secs_f64(),
    }
}

/// Execute one script in a fresh container: non-interactive `Rscript`, the
/// script's own directory as working directory, stdout and stderr merged by
/// the container shell, no network unless enabled. Overrunning the limit
/// kills the container by name and yields a timeout record with no exit
/// code.
pub fn run_script(
    runtime: &ContainerRuntime,
    image_tag: &str,
    project_id: &str,
    script: &str,
    limits: ExecLimits,
) -> Result<ExecutionRecord, ExecError> {
    let started = Instant::now();
    let container_name = format!(
        "repro-audit-{}-{}",
        sanitize_name(project_id),
        std::process::id() as u64 ^ started.elapsed().subsec_nanos() as u64
    );
    let script_dir = match script.rsplit_once('/') {
        Some((dir, _)) => dir,
        None => ".",
    };
    let inner = format!(
        "cd -- \"${{REPO_DIR:-$HOME}}/{}\" && Rscript --vanilla \"{}\" 2>&1",
        shell_escape(script_dir),
        shell_escape(script.rsplit('/').next().unwrap_or(script)),
    );
    let mut argv = vec![
        runtime.binary.clone(),
        "run".to_string(),
        "--rm".to_string(),
        "--name".to_string(),
        container_name.clone(),
        "--memory".to_string(),
        format!("{}m", limits.mem_mb),
    ];
    if !runtime.allow_network {
        argv.push("--network".to_string());
        argv.push("none".to_string());
    }
    argv.extend([
        image_tag.to_string(),
        "sh".to_string(),
        "-c".to_string(),
        inner,
    ]);

    let timeout = Duration::from_secs(limits.timeout_s);
    let kill_container = || {
        let _ = Command::new(&runtime.binary)
            .args(["kill", &container_name])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
        let _ = Command::new(&runtime.binary)
            .args(["rm", "-f", &container_name])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
    };

    match run_captured(&argv, timeout, Some(&kill_container)) {
        Ok((Some(code), log)) => {
            // Docker's own launch failures use exit codes 125-127.
            if (125..=127).contains(&code) {
                return Err(ExecError::ContainerLaunchError(format!(
                    "runtime exit {code}: {}",
                    log.lines().last().unwrap_or_default()
                )));
            }
            Ok(ExecutionRecord {
                project_id: project_id.to_string(),
                script: script.to_string(),
                status: if code == 0 {
                    ExecStatus::Success
                } else {
                    ExecStatus::Failed
                },
                exit_code: Some(code),
                log,
                duration_s: started.elapsed().as_secs_f64(),
                synthetic: false,
            })
        }
        Ok((None, mut log)) => {
            log.push_str(&format!(
                "\n{TIMEOUT_MARKER} {}s; container terminated\n",
                limits.timeout_s
            ));
            Ok(ExecutionRecord {
                project_id: project_id.to_string(),
                script: script.to_string(),
                status: ExecStatus::Timeout,
                exit_code: None,
                log,
                duration_s: started.elapsed().as_secs_f64(),
                synthetic: false,
            })
        }
        Err(e) => Err(ExecError::ContainerLaunchError(e.to_string())),
    }
}

/// Run every script of a project. A failed or skipped build propagates as
/// not_run for all scripts; otherwise each script runs independently in a
/// fresh container, in deterministic lexicographic order, with up to
/// `parallel` containers at once.
pub fn run_project(
    runtime: Option<&ContainerRuntime>,
    build: &BuildRecord,
    scripts: &[String],
    limits: ExecLimits,
    parallel: usize,
) -> Vec<ExecutionRecord> {
    let mut ordered: Vec<String> = scripts.to_vec();
    ordered.sort();

    let not_run = |script: &str, why: &str| ExecutionRecord {
        project_id: build.project_id.clone(),
        script: script.to_string(),
        status: ExecStatus::NotRun,
        exit_code: None,
        log: why.to_string(),
        duration_s: 0.0,
        synthetic: false,
    };

    let (Some(runtime), BuildStatus::Built, Some(tag)) =
        (runtime, build.status, build.image_tag.as_deref())
    else {
        let why = match build.status {
            BuildStatus::BuildFailed => "not run: image build failed",
            _ => "not run: no container runtime",
        };
        return ordered.iter().map(|s| not_run(s, why)).collect();
    };

    crate::util::parallel_indexed(ordered.len(), parallel.max(1), |i| {
        let script = &ordered[i];
        match run_script(runtime, tag, &build.project_id, script, limits) {
            Ok(record) => record,
            Err(e) => not_run(script, &format!("not run: {e}")),
        }
    })
}

/// One scripted outcome for the synthetic executor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedOutcome {
    pub status: ExecStatus,
    #[serde(default)]
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub log: String,
}

/// CI substitute for environments without a container runtime: emits
/// records exactly as scripted, tagged synthetic. Timeout outcomes get the
/// standard marker appended so classification behaves as in live runs.
pub fn dry_run_executor(
    project_id: &str,
    scripted: &BTreeMap<String, ScriptedOutcome>,
) -> Vec<ExecutionRecord> {
    scripted
        .iter()
        .map(|(script, outcome)| {
            let mut log = outcome.log.clone();
            if outcome.status == ExecStatus::Timeout && !log.contains(TIMEOUT_MARKER) {
                log.push_str(&format!("\n{TIMEOUT_MARKER} scripted timeout\n"));
            }
            let exit_code = outcome.exit_code.or(match outcome.status {
                ExecStatus::Success => Some(0),
                ExecStatus::Failed => Some(1),
                _ => None,
            });
            ExecutionRecord {
                project_id: project_id.to_string(),
                script: script.clone(),
                status: outcome.status,
                exit_code,
                log,
                duration_s: 0.0,
                synthetic: true,
            }
        })
        .collect()
}

fn sanitize_name(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

fn shell_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('$', "\\$")
}

/// Spawn a command, merge its output streams, and enforce a wall-clock
/// limit. Returns `(Some(exit_code), log)` on completion or `(None, log)`
/// on timeout, after invoking `on_timeout` (container kill) and reaping the
/// local child so no orphan processes remain.
fn run_captured(
    argv: &[String],
    timeout: Duration,
    on_timeout: Option<&dyn Fn()>,
) -> std::io::Result<(Option<i32>, String)> {
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn()?;

    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let out_handle = spawn_reader(stdout);
    let err_handle = spawn_reader(stderr);

    let started = Instant::now();
    let exit = loop {
        match child.try_wait()? {
            Some(status) => break Some(status),
            None => {
                if started.elapsed() >= timeout {
                    break None;
                }
                std::thread::sleep(Duration::from_millis(25));
            }
        }
    };

    let code = match exit {
        Some(status) => Some(status.code().unwrap_or(-1)),
        None => {
            if let Some(f) = on_timeout {
                f();
            }
            reap(&mut child);
            None
        }
    };
    let mut log = out_handle.join().unwrap_or_default();
    let err = err_handle.join().unwrap_or_default();
    if !err.is_empty() {
        log.push_str(&err);
    }
    Ok((code, log))
}

fn spawn_reader<R: Read + Send + 'static>(mut r: R) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn reap(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}
