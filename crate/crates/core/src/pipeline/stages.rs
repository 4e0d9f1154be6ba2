//! Stage implementations. Every stage reads its inputs from the artifact
//! layout on disk and persists its outputs there, so any stage can be
//! re-run from cache and the `pipeline` command is exactly the composition
//! of the individual stages.
//!
//! Artifact layout under the configured directories:
//!
//! ```text
//! cache/<project_id>/<original tree> + manifest.json
//! staging/<project_id>/<tree> + DESCRIPTION, install.R, runtime.txt
//! out/unretrievable.json
//! out/inventories.json
//! out/deps/<project_id>/dependencies.json
//! out/analysis/<project_id>.jsonl        (with dump_analysis)
//! out/builds.jsonl
//! out/logs/<project_id>/<script>.log
//! out/executions.jsonl
//! out/classifications.jsonl
//! out/report.{json,csv,md}
//! out/.stages/<stage>.hash               (stage input-content keys)
//! ```

use super::config::{expected_by_source, source_is_remote, PipelineConfig};
use super::PipelineError;
use crate::analyzer::analyze_source;
use crate::classify::{Classifier, ErrorClassification};
use crate::deps::{
    infer_dependencies, lint_portability, merge_project_dependencies, DependencySet,
    PortabilityFinding,
};
use crate::envspec::{
    generate_description, scan_repro_files, stage_environment, ReproFileInventory,
};
use crate::exec::{
    build_image, dry_run_executor, run_project, BuildRecord, BuildStatus, BuilderConfig,
    ContainerRuntime, ExecLimits, ExecutionRecord, ScriptedOutcome,
};
use crate::ingest::{
    cache_is_valid, fetch_project, load_cached_manifest, verify_referenced_scripts, IngestError,
    OsfClient, ProjectManifest, ProjectRef,
};
use crate::report::{
    aggregate, emit_report, project_status, unretrievable_status, AuditReport, ProjectStatus,
    ReportFormat, RunMetadata,
};
use crate::util::{parallel_indexed, sha256_hex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const EPOCH_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

fn stage_err(stage: &'static str, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage,
        message: err.to_string(),
    }
}

/// Resolved artifact paths for one run.
pub struct Layout {
    pub cache_dir: PathBuf,
    pub staging_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            cache_dir: cfg.cache_dir.clone(),
            staging_dir: cfg.staging_dir.clone(),
            output_dir: cfg.output_dir.clone(),
        }
    }

    pub fn project_cache(&self, id: &str) -> PathBuf {
        self.cache_dir.join(id)
    }

    pub fn project_staging(&self, id: &str) -> PathBuf {
        self.staging_dir.join(id)
    }

    pub fn unretrievable(&self) -> PathBuf {
        self.output_dir.join("unretrievable.json")
    }

    pub fn inventories(&self) -> PathBuf {
        self.output_dir.join("inventories.json")
    }

    pub fn dependencies(&self, id: &str) -> PathBuf {
        self.output_dir.join("deps").join(id).join("dependencies.json")
    }

    pub fn analysis_dump(&self, id: &str) -> PathBuf {
        self.output_dir.join("analysis").join(format!("{id}.jsonl"))
    }

    pub fn builds(&self) -> PathBuf {
        self.output_dir.join("builds.jsonl")
    }

    pub fn executions(&self) -> PathBuf {
        self.output_dir.join("executions.jsonl")
    }

    pub fn script_log(&self, id: &str, script: &str) -> PathBuf {
        self.output_dir
            .join("logs")
            .join(id)
            .join(format!("{script}.log"))
    }

    pub fn classifications(&self) -> PathBuf {
        self.output_dir.join("classifications.jsonl")
    }

    pub fn report(&self, format: ReportFormat) -> PathBuf {
        let name = match format {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
        };
        self.output_dir.join(name)
    }

    fn stage_hash_path(&self, stage: &str) -> PathBuf {
        self.output_dir.join(".stages").join(format!("{stage}.hash"))
    }

    /// True when `stage` last ran with the same input key and all its
    /// outputs still exist; the stage can then be skipped, leaving outputs
    /// byte-identical.
    pub fn stage_unchanged(&self, stage: &str, input_key: &str, outputs: &[PathBuf]) -> bool {
        let recorded = fs::read_to_string(self.stage_hash_path(stage)).ok();
        recorded.as_deref() == Some(input_key) && outputs.iter().all(|p| p.exists())
    }

    pub fn record_stage(&self, stage: &str, input_key: &str) -> std::io::Result<()> {
        let path = self.stage_hash_path(stage);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, input_key)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable artifact");
    fs::write(path, text + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable artifact"));
        out.push('\n');
    }
    fs::write(path, out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

/// A project that could not be retrieved; data, not an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Unretrievable {
    pub source: String,
    pub project_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct FetchOutcome {
    pub manifests: Vec<ProjectManifest>,
    pub unretrievable: Vec<Unretrievable>,
}

/// Resolve config project entries into refs; remote GUIDs that fail the
/// shape check and local paths that do not exist are config errors.
pub fn resolve_refs(cfg: &PipelineConfig) -> Result<Vec<ProjectRef>, PipelineError> {
    let mut refs = Vec::new();
    for entry in &cfg.projects {
        let source = entry.source.as_str();
        let r = if source_is_remote(source) {
            if cfg.offline {
                return Err(PipelineError::Config(format!(
                    "project {source} is remote but offline mode is on"
                )));
            }
            ProjectRef::remote(source).map_err(|e| PipelineError::Config(e.to_string()))?
        } else {
            ProjectRef::local(Path::new(source))
                .map_err(|e| PipelineError::Config(format!("not a local project dir: {e}")))?
        };
        refs.push(r);
    }
    Ok(refs)
}

/// Fetch every project into the cache (or reuse a hash-valid cached copy),
/// verify referenced scripts, and persist per-project manifests plus the
/// unretrievable list. Per-project retrieval failures are recorded, not
/// raised; the batch always completes.
pub fn stage_fetch(cfg: &PipelineConfig) -> Result<FetchOutcome, PipelineError> {
    let layout = Layout::new(cfg);
    let refs = resolve_refs(cfg)?;
    let expected = expected_by_source(&cfg.projects);
    let client = OsfClient::new(&cfg.api_base_url, cfg.fetch_concurrency)
        .map_err(|e| stage_err("fetch", e))?;

    let results = parallel_indexed(refs.len(), cfg.limits.parallel_projects, |i| {
        let project_ref = &refs[i];
        let source = &cfg.projects[i].source;
        let dest = layout.project_cache(&project_ref.project_id);

        let cached = load_cached_manifest(&dest)
            .ok()
            .flatten()
            .filter(|m| m.project_ref == *project_ref && cache_is_valid(m, &dest));
        let fetched = match cached {
            Some(manifest) => Ok(manifest),
            None => fetch_project(&client, project_ref, &dest),
        };
        match fetched {
            Ok(manifest) => {
                let expected_scripts = expected.get(source).cloned().unwrap_or_default();
                let verified = verify_referenced_scripts(&manifest, &expected_scripts);
                if let Err(e) = crate::ingest::save_manifest(&verified, &dest) {
                    return Err(Unretrievable {
                        source: source.clone(),
                        project_id: project_ref.project_id.clone(),
                        reason: format!("manifest write failed: {e}"),
                    });
                }
                Ok(verified)
            }
            Err(e @ IngestError::ProjectNotFound(_)) => Err(Unretrievable {
                source: source.clone(),
                project_id: project_ref.project_id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => Err(Unretrievable {
                source: source.clone(),
                project_id: project_ref.project_id.clone(),
                reason: format!("transfer failed: {e}"),
            }),
        }
    });

    let mut manifests = Vec::new();
    let mut unretrievable = Vec::new();
    for result in results {
        match result {
            Ok(m) => manifests.push(m),
            Err(u) => unretrievable.push(u),
        }
    }
    manifests.sort_by(|a, b| a.project_ref.project_id.cmp(&b.project_ref.project_id));
    unretrievable.sort_by(|a, b| a.project_id.cmp(&b.project_id));
    write_json(&layout.unretrievable(), &unretrievable).map_err(|e| stage_err("fetch", e))?;
    Ok(FetchOutcome {
        manifests,
        unretrievable,
    })
}

/// Load the manifests a previous fetch stage left in the cache.
pub fn load_fetched(cfg: &PipelineConfig) -> Result<FetchOutcome, PipelineError> {
    let layout = Layout::new(cfg);
    let refs = resolve_refs(cfg)?;
    let unretrievable: Vec<Unretrievable> = if layout.unretrievable().is_file() {
        read_json(&layout.unretrievable()).map_err(|e| stage_err("fetch", e))?
    } else {
        Vec::new()
    };
    let mut manifests = Vec::new();
    for project_ref in &refs {
        if unretrievable.iter().any(|u| u.project_id == project_ref.project_id) {
            continue;
        }
        let dir = layout.project_cache(&project_ref.project_id);
        match load_cached_manifest(&dir).map_err(|e| stage_err("fetch", e))? {
            Some(m) => manifests.push(m),
            None => {
                return Err(stage_err(
                    "fetch",
                    format!(
                        "no cached manifest for {}; run the fetch stage first",
                        project_ref.project_id
                    ),
                ))
            }
        }
    }
    manifests.sort_by(|a, b| a.project_ref.project_id.cmp(&b.project_ref.project_id));
    Ok(FetchOutcome {
        manifests,
        unretrievable,
    })
}

fn manifests_key(manifests: &[ProjectManifest]) -> String {
    let mut acc = String::new();
    for m in manifests {
        acc.push_str(&m.project_ref.project_id);
        for f in &m.files {
            acc.push_str(&f.path);
            acc.push_str(&f.sha256);
        }
    }
    sha256_hex(acc.as_bytes())
}

/// Scan every fetched project for reproducibility-related files.
pub fn stage_scan(
    cfg: &PipelineConfig,
    manifests: &[ProjectManifest],
) -> Result<Vec<ReproFileInventory>, PipelineError> {
    let layout = Layout::new(cfg);
    let key = manifests_key(manifests);
    let out_path = layout.inventories();
    if layout.stage_unchanged("scan", &key, &[out_path.clone()]) {
        return read_json(&out_path).map_err(|e| stage_err("scan", e));
    }
    let inventories: Vec<ReproFileInventory> = manifests.iter().map(scan_repro_files).collect();
    write_json(&out_path, &inventories).map_err(|e| stage_err("scan", e))?;
    layout.record_stage("scan", &key).map_err(|e| stage_err("scan", e))?;
    Ok(inventories)
}

/// Per-script dependency report persisted as `dependencies.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptDeps {
    pub packages: Vec<String>,
    pub rejected: Vec<crate::deps::RejectedName>,
    pub lints: Vec<PortabilityFinding>,
    pub dynamic_misses: Vec<crate::deps::DynamicMiss>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectDeps {
    pub scripts: BTreeMap<String, ScriptDeps>,
    pub packages: Vec<String>,
    pub remotes: Vec<String>,
    pub encoding_suspect: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub merged: BTreeMap<String, DependencySet>,
    pub lints: Vec<PortabilityFinding>,
}

/// Analyze every R script in every fetched project, infer dependencies,
/// and collect portability lints. Writes one `dependencies.json` per
/// project (stable key order) and the optional analysis dump.
pub fn stage_infer(
    cfg: &PipelineConfig,
    manifests: &[ProjectManifest],
) -> Result<InferOutcome, PipelineError> {
    let layout = Layout::new(cfg);
    let mut merged = BTreeMap::new();
    let mut all_lints = Vec::new();

    let per_project = parallel_indexed(manifests.len(), cfg.limits.parallel_projects, |i| {
        let manifest = &manifests[i];
        let id = &manifest.project_ref.project_id;
        let cache = layout.project_cache(id);
        let mut scripts: BTreeMap<String, ScriptDeps> = BTreeMap::new();
        let mut sets = Vec::new();
        let mut lints = Vec::new();
        let mut suspect = Vec::new();
        let mut dump_lines = Vec::new();

        for script in &manifest.r_scripts {
            let bytes = fs::read(cache.join(script)).unwrap_or_default();
            let analysis = analyze_source(&bytes);
            if analysis.encoding_suspect {
                suspect.push(script.clone());
            }
            let set = infer_dependencies(&analysis.calls, script);
            let script_lints =
                lint_portability(&analysis.tokens, &analysis.calls, script, None);
            if cfg.dump_analysis {
                dump_lines.push(
                    serde_json::json!({
                        "script": script,
                        "tokens": analysis.tokens,
                        "calls": analysis.calls,
                        "issues": analysis.issues,
                    })
                    .to_string(),
                );
            }
            scripts.insert(
                script.clone(),
                ScriptDeps {
                    packages: set.packages.iter().cloned().collect(),
                    rejected: set.rejected.clone(),
                    lints: script_lints.clone(),
                    dynamic_misses: set.dynamic_misses.clone(),
                },
            );
            lints.extend(script_lints);
            sets.push(set);
        }
        // Manifest-level lints (oversized files) once per project.
        lints.extend(lint_portability(&[], &[], "", Some(manifest)));

        let project_set = merge_project_dependencies(&sets);
        let artifact = ProjectDeps {
            scripts,
            packages: project_set.packages.iter().cloned().collect(),
            remotes: project_set.remotes.iter().cloned().collect(),
            encoding_suspect: suspect,
        };
        (id.clone(), project_set, artifact, lints, dump_lines)
    });

    for (id, project_set, artifact, lints, dump_lines) in per_project {
        write_json(&layout.dependencies(&id), &artifact).map_err(|e| stage_err("infer", e))?;
        if cfg.dump_analysis {
            let dump_path = layout.analysis_dump(&id);
            if let Some(parent) = dump_path.parent() {
                fs::create_dir_all(parent).map_err(|e| stage_err("infer", e))?;
            }
            fs::write(&dump_path, dump_lines.join("\n") + "\n")
                .map_err(|e| stage_err("infer", e))?;
        }
        all_lints.extend(lints);
        merged.insert(id, project_set);
    }
    Ok(InferOutcome {
        merged,
        lints: all_lints,
    })
}

/// Generate environment specs and stage each project for the builder:
/// a fresh copy of the cached tree plus `DESCRIPTION`, `install.R` and
/// `runtime.txt` (any user DESCRIPTION preserved as `DESCRIPTION.orig`).
pub fn stage_spec(
    cfg: &PipelineConfig,
    manifests: &[ProjectManifest],
    merged: &BTreeMap<String, DependencySet>,
) -> Result<(), PipelineError> {
    let layout = Layout::new(cfg);
    for manifest in manifests {
        let id = &manifest.project_ref.project_id;
        let deps = merged.get(id).cloned().unwrap_or_default();
        let spec = generate_description(&deps, id, &cfg.runtime_pin, &cfg.cran_snapshot_url)
            .map_err(|e| stage_err("spec", e))?;

        let staging = layout.project_staging(id);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| stage_err("spec", e))?;
        }
        let cache = layout.project_cache(id);
        for file in &manifest.files {
            let src = cache.join(&file.path);
            let dst = staging.join(&file.path);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| stage_err("spec", e))?;
            }
            fs::copy(&src, &dst).map_err(|e| stage_err("spec", e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| stage_err("spec", e))?;
        stage_environment(&spec, &staging).map_err(|e| stage_err("spec", e))?;
    }
    Ok(())
}

fn files_key(paths: &[PathBuf]) -> String {
    let mut acc = String::new();
    for path in paths {
        acc.push_str(&path.display().to_string());
        if let Ok(bytes) = fs::read(path) {
            acc.push_str(&sha256_hex(&bytes));
        }
    }
    sha256_hex(acc.as_bytes())
}

/// Build one image per project, or fabricate built records in dry-run mode.
/// A missing runtime yields skipped records so downstream scripts become
/// not_run, distinct from failed. Re-runs with unchanged staged inputs
/// reuse the previous records instead of rebuilding.
pub fn stage_build(
    cfg: &PipelineConfig,
    manifests: &[ProjectManifest],
) -> Result<Vec<BuildRecord>, PipelineError> {
    let layout = Layout::new(cfg);
    let env_files: Vec<PathBuf> = manifests
        .iter()
        .flat_map(|m| {
            let staging = layout.project_staging(&m.project_ref.project_id);
            ["DESCRIPTION", "install.R", "runtime.txt"]
                .into_iter()
                .map(move |f| staging.join(f))
        })
        .collect();
    let runtime_marker = if cfg.dry_run {
        "dry-run".to_string()
    } else {
        ContainerRuntime::detect()
            .map(|r| r.binary)
            .unwrap_or_else(|| "none".to_string())
    };
    let key = sha256_hex(
        format!(
            "{}|{}|{:?}|{}",
            manifests_key(manifests),
            files_key(&env_files),
            cfg.builder_command,
            runtime_marker,
        )
        .as_bytes(),
    );
    if layout.stage_unchanged("build", &key, &[layout.builds()]) {
        return load_builds(cfg);
    }
    let records: Vec<BuildRecord> = if cfg.dry_run {
        manifests
            .iter()
            .map(|m| {
                let id = &m.project_ref.project_id;
                BuildRecord {
                    project_id: id.clone(),
                    status: BuildStatus::Built,
                    image_tag: Some(crate::exec::image_tag_for(id)),
                    build_log: "dry run: synthetic build".to_string(),
                    duration_s: 0.0,
                }
            })
            .collect()
    } else {
        let runtime = ContainerRuntime::detect();
        if runtime.is_none() {
            log::warn!("no container runtime available; all builds skipped");
        }
        let builder = cfg
            .builder_command
            .as_ref()
            .map(|command| BuilderConfig {
                command: command.clone(),
            })
            .unwrap_or_default();
        let build_timeout = Duration::from_secs(cfg.limits.timeout_s.max(600));
        parallel_indexed(manifests.len(), cfg.limits.parallel_projects, |i| {
            let id = &manifests[i].project_ref.project_id;
            build_image(
                runtime.as_ref(),
                &builder,
                &layout.project_staging(id),
                id,
                build_timeout,
            )
        })
    };
    write_jsonl(&layout.builds(), &records).map_err(|e| stage_err("build", e))?;
    layout
        .record_stage("build", &key)
        .map_err(|e| stage_err("build", e))?;
    Ok(records)
}

pub fn load_builds(cfg: &PipelineConfig) -> Result<Vec<BuildRecord>, PipelineError> {
    read_jsonl(&Layout::new(cfg).builds()).map_err(|e| stage_err("build", e))
}

type OutcomeMap = BTreeMap<String, BTreeMap<String, ScriptedOutcome>>;

fn load_dry_run_outcomes(cfg: &PipelineConfig) -> Result<OutcomeMap, PipelineError> {
    match &cfg.dry_run_outcomes {
        Some(path) => read_json(path).map_err(|e| stage_err("exec", e)),
        None => Ok(BTreeMap::new()),
    }
}

/// Execute every script of every built project (fresh container per script,
/// lexicographic order) or emit the scripted synthetic records in dry-run
/// mode. Logs are persisted per script; records to `executions.jsonl`.
/// Re-runs with unchanged inputs reuse the previous records and logs.
pub fn stage_exec(
    cfg: &PipelineConfig,
    manifests: &[ProjectManifest],
    builds: &[BuildRecord],
) -> Result<Vec<ExecutionRecord>, PipelineError> {
    let layout = Layout::new(cfg);
    let outcomes_key = cfg
        .dry_run_outcomes
        .as_ref()
        .map(|p| files_key(&[p.clone()]))
        .unwrap_or_default();
    let key = sha256_hex(
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            manifests_key(manifests),
            files_key(&[layout.builds()]),
            outcomes_key,
            cfg.limits.timeout_s,
            cfg.limits.mem_mb,
            cfg.container_network,
            cfg.dry_run,
        )
        .as_bytes(),
    );
    if layout.stage_unchanged("exec", &key, &[layout.executions()]) {
        let records = load_executions(cfg)?;
        let logs_intact = records
            .iter()
            .all(|r| layout.script_log(&r.project_id, &r.script).is_file());
        if logs_intact {
            return Ok(records);
        }
    }
    let by_id: BTreeMap<&str, &BuildRecord> = builds
        .iter()
        .map(|b| (b.project_id.as_str(), b))
        .collect();
    let scripted = if cfg.dry_run {
        load_dry_run_outcomes(cfg)?
    } else {
        BTreeMap::new()
    };
    let runtime = if cfg.dry_run {
        None
    } else {
        ContainerRuntime::detect().map(|mut r| {
            r.allow_network = cfg.container_network;
            r
        })
    };

    let mut records = Vec::new();
    for manifest in manifests {
        let id = &manifest.project_ref.project_id;
        let Some(build) = by_id.get(id.as_str()) else {
            return Err(stage_err(
                "exec",
                format!("no build record for {id}; run the build stage first"),
            ));
        };
        let project_records = if cfg.dry_run {
            let empty = BTreeMap::new();
            let outcomes = scripted.get(id).unwrap_or(&empty);
            let mut plan: BTreeMap<String, ScriptedOutcome> = BTreeMap::new();
            for script in &manifest.r_scripts {
                let outcome = outcomes.get(script).cloned().unwrap_or(ScriptedOutcome {
                    status: crate::exec::ExecStatus::Success,
                    exit_code: Some(0),
                    log: String::new(),
                });
                plan.insert(script.clone(), outcome);
            }
            dry_run_executor(id, &plan)
        } else {
            run_project(
                runtime.as_ref(),
                build,
                &manifest.r_scripts,
                ExecLimits {
                    timeout_s: cfg.limits.timeout_s,
                    mem_mb: cfg.limits.mem_mb,
                },
                cfg.limits.parallel_containers,
            )
        };
        for record in &project_records {
            let log_path = layout.script_log(id, &record.script);
            if let Some(parent) = log_path.parent() {
                fs::create_dir_all(parent).map_err(|e| stage_err("exec", e))?;
            }
            fs::write(&log_path, &record.log).map_err(|e| stage_err("exec", e))?;
        }
        records.extend(project_records);
    }
    write_jsonl(&layout.executions(), &records).map_err(|e| stage_err("exec", e))?;
    layout
        .record_stage("exec", &key)
        .map_err(|e| stage_err("exec", e))?;
    Ok(records)
}

pub fn load_executions(cfg: &PipelineConfig) -> Result<Vec<ExecutionRecord>, PipelineError> {
    read_jsonl(&Layout::new(cfg).executions()).map_err(|e| stage_err("exec", e))
}

pub fn make_classifier(cfg: &PipelineConfig) -> Result<Classifier, PipelineError> {
    match &cfg.pattern_table_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| stage_err("classify", format!("{}: {e}", path.display())))?;
            Classifier::from_table(&text).map_err(|e| stage_err("classify", e))
        }
        None => Ok(Classifier::builtin()),
    }
}

/// Classify every failed or timed-out execution record.
pub fn stage_classify(
    cfg: &PipelineConfig,
    records: &[ExecutionRecord],
) -> Result<Vec<ErrorClassification>, PipelineError> {
    let layout = Layout::new(cfg);
    let classifier = make_classifier(cfg)?;
    let key = sha256_hex(
        format!(
            "{}|{}",
            files_key(&[layout.executions()]),
            classifier.table_hash()
        )
        .as_bytes(),
    );
    if layout.stage_unchanged("classify", &key, &[layout.classifications()]) {
        return load_classifications(cfg);
    }
    let classifications = classifier.classify_batch(records);
    write_jsonl(&layout.classifications(), &classifications)
        .map_err(|e| stage_err("classify", e))?;
    layout
        .record_stage("classify", &key)
        .map_err(|e| stage_err("classify", e))?;
    Ok(classifications)
}

pub fn load_classifications(
    cfg: &PipelineConfig,
) -> Result<Vec<ErrorClassification>, PipelineError> {
    read_jsonl(&Layout::new(cfg).classifications()).map_err(|e| stage_err("classify", e))
}

fn now_timestamp(cfg: &PipelineConfig) -> String {
    if cfg.dry_run {
        EPOCH_TIMESTAMP.to_string()
    } else {
        chrono::Utc::now()
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

/// Aggregate everything into the audit report and emit all three formats.
pub fn stage_report(
    cfg: &PipelineConfig,
    manifests: &[ProjectManifest],
    unretrievable: &[Unretrievable],
    builds: &[BuildRecord],
    records: &[ExecutionRecord],
    classifications: &[ErrorClassification],
    inventories: &[ReproFileInventory],
    lints: &[PortabilityFinding],
    started_at: String,
) -> Result<AuditReport, PipelineError> {
    let layout = Layout::new(cfg);
    let classifier = make_classifier(cfg)?;
    let key = sha256_hex(
        format!(
            "{}|{}|{}|{}|{}",
            files_key(&[
                layout.unretrievable(),
                layout.inventories(),
                layout.builds(),
                layout.executions(),
                layout.classifications(),
            ]),
            serde_json::to_string(lints).unwrap_or_default(),
            classifier.table_hash(),
            cfg.runtime_pin,
            env!("CARGO_PKG_VERSION"),
        )
        .as_bytes(),
    );
    let report_paths = [
        layout.report(ReportFormat::Json),
        layout.report(ReportFormat::Csv),
        layout.report(ReportFormat::Markdown),
    ];
    if layout.stage_unchanged("report", &key, &report_paths) {
        return read_json(&layout.report(ReportFormat::Json)).map_err(|e| stage_err("report", e));
    }
    let by_project = |id: &str| -> Vec<ExecutionRecord> {
        records
            .iter()
            .filter(|r| r.project_id == id)
            .cloned()
            .collect()
    };
    let mut statuses: Vec<ProjectStatus> = Vec::new();
    for manifest in manifests {
        let id = &manifest.project_ref.project_id;
        let Some(build) = builds.iter().find(|b| &b.project_id == id) else {
            return Err(stage_err("report", format!("no build record for {id}")));
        };
        statuses.push(project_status(&by_project(id), build));
    }
    for u in unretrievable {
        statuses.push(unretrievable_status(&u.project_id));
    }

    let metadata = RunMetadata {
        pipeline_version: env!("CARGO_PKG_VERSION").to_string(),
        pattern_table_hash: classifier.table_hash(),
        runtime_pin: cfg.runtime_pin.clone(),
        started_at,
        finished_at: now_timestamp(cfg),
    };
    let report = aggregate(
        &statuses,
        records,
        classifications,
        inventories,
        lints,
        metadata,
    )
    .map_err(|e| stage_err("report", e))?;

    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        let rendered = emit_report(&report, format).map_err(|e| stage_err("report", e))?;
        let path = layout.report(format);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| stage_err("report", e))?;
        }
        fs::write(&path, rendered).map_err(|e| stage_err("report", e))?;
    }
    layout
        .record_stage("report", &key)
        .map_err(|e| stage_err("report", e))?;
    Ok(report)
}

/// The whole pipeline: fetch → verify → scan → infer → spec → build → exec
/// → classify → aggregate → emit. Script failures are data; only
/// infrastructure problems raise errors.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<AuditReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let started_at = now_timestamp(cfg);
    let fetched = stage_fetch(cfg)?;
    let inventories = stage_scan(cfg, &fetched.manifests)?;
    let inferred = stage_infer(cfg, &fetched.manifests)?;
    stage_spec(cfg, &fetched.manifests, &inferred.merged)?;
    let builds = stage_build(cfg, &fetched.manifests)?;
    let records = stage_exec(cfg, &fetched.manifests, &builds)?;
    let classifications = stage_classify(cfg, &records)?;
    stage_report(
        cfg,
        &fetched.manifests,
        &fetched.unretrievable,
        &builds,
        &records,
        &classifications,
        &inventories,
        &inferred.lints,
        started_at,
    )
}
