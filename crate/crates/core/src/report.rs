//! Aggregation of per-script outcomes into script- and project-level
//! reproducibility statistics, and report emission as JSON (canonical),
//! CSV (per-project rows) and Markdown.

use crate::classify::{ErrorCategory, ErrorClassification};
use crate::deps::PortabilityFinding;
use crate::envspec::{ReproFileInventory, REPRO_FILE_PATTERNS};
use crate::exec::{BuildRecord, BuildStatus, ExecStatus, ExecutionRecord};
use crate::util::round_half_up;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Project-level reproducibility outcome.
///
/// `full`/`partial`/`none` apply to built projects only; `build_failed`,
/// `not_run` (no container runtime) and `unretrievable` projects are
/// reported separately and excluded from the level-rate denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectLevel {
    Full,
    Partial,
    None,
    BuildFailed,
    NotRun,
    Unretrievable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectStatus {
    pub project_id: String,
    pub level: ProjectLevel,
    pub n_scripts: usize,
    pub n_success: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub projects: usize,
    pub scripts: usize,
    pub success: usize,
    pub failed: usize,
    pub timeout: usize,
    pub not_run: usize,
}

/// Percentages are round-half-up at two decimals; `None` marks an undefined
/// rate (zero denominator), never a division error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub script_success_pct: Option<f64>,
    pub full_pct: Option<f64>,
    pub partial_pct: Option<f64>,
    pub none_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub count: usize,
    /// Percent of failed (failed + timeout) scripts, one decimal as in the
    /// category breakdown figure.
    pub pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryRow {
    pub pattern: String,
    pub count: usize,
    pub pct: Option<f64>,
}

/// File-presence summary. Row percentages are one-decimal half-up; the
/// no-dependency-file row is the complement of the file rows so that the
/// printed table always sums to 100.0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InventorySummary {
    pub projects: usize,
    pub rows: Vec<InventoryRow>,
    pub no_dependency_file: Option<InventoryRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub pipeline_version: String,
    pub pattern_table_hash: String,
    pub runtime_pin: String,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema: u32,
    pub totals: Totals,
    pub rates: Rates,
    pub error_breakdown: BTreeMap<String, CategoryCount>,
    pub inventory_summary: InventorySummary,
    pub lints_summary: BTreeMap<String, usize>,
    pub run_metadata: RunMetadata,
    pub projects: Vec<ProjectStatus>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

/// Derive a project's level from its build record and execution records.
/// Timeout counts as non-success.
pub fn project_status(records: &[ExecutionRecord], build: &BuildRecord) -> ProjectStatus {
    let n_scripts = records.len();
    let n_success = records
        .iter()
        .filter(|r| r.status == ExecStatus::Success)
        .count();
    let level = match build.status {
        BuildStatus::BuildFailed => ProjectLevel::BuildFailed,
        BuildStatus::Skipped => ProjectLevel::NotRun,
        BuildStatus::Built => {
            if n_scripts > 0 && n_success == n_scripts {
                ProjectLevel::Full
            } else if n_success > 0 {
                ProjectLevel::Partial
            } else {
                ProjectLevel::None
            }
        }
    };
    ProjectStatus {
        project_id: build.project_id.clone(),
        level,
        n_scripts,
        n_success,
    }
}

pub fn unretrievable_status(project_id: &str) -> ProjectStatus {
    ProjectStatus {
        project_id: project_id.to_string(),
        level: ProjectLevel::Unretrievable,
        n_scripts: 0,
        n_success: 0,
    }
}

fn pct2(numerator: usize, denominator: usize) -> Option<f64> {
    (denominator > 0).then(|| round_half_up(100.0 * numerator as f64 / denominator as f64, 2))
}

fn pct1(numerator: usize, denominator: usize) -> Option<f64> {
    (denominator > 0).then(|| round_half_up(100.0 * numerator as f64 / denominator as f64, 1))
}

/// Aggregate consistent per-project inputs into one report. Ordering of
/// every input list is irrelevant; all rates are recomputable from the
/// integer totals.
pub fn aggregate(
    statuses: &[ProjectStatus],
    records: &[ExecutionRecord],
    classifications: &[ErrorClassification],
    inventories: &[ReproFileInventory],
    lints: &[PortabilityFinding],
    run_metadata: RunMetadata,
) -> Result<AuditReport, ReportError> {
    let known: BTreeSet<&str> = statuses.iter().map(|s| s.project_id.as_str()).collect();
    if let Some(record) = records.iter().find(|r| !known.contains(r.project_id.as_str())) {
        return Err(ReportError::InconsistentInputs(format!(
            "execution record references unknown project {}",
            record.project_id
        )));
    }

    let mut projects: Vec<ProjectStatus> = statuses.to_vec();
    projects.sort_by(|a, b| a.project_id.cmp(&b.project_id));

    let count = |status: ExecStatus| records.iter().filter(|r| r.status == status).count();
    let totals = Totals {
        projects: projects.len(),
        scripts: records.len(),
        success: count(ExecStatus::Success),
        failed: count(ExecStatus::Failed),
        timeout: count(ExecStatus::Timeout),
        not_run: count(ExecStatus::NotRun),
    };
    let sum_scripts: usize = projects.iter().map(|p| p.n_scripts).sum();
    if sum_scripts != totals.scripts {
        return Err(ReportError::InconsistentInputs(format!(
            "project script counts sum to {sum_scripts} but {} records exist",
            totals.scripts
        )));
    }

    let failed_total = totals.failed + totals.timeout;
    if classifications.len() != failed_total {
        return Err(ReportError::InconsistentInputs(format!(
            "{} classifications for {failed_total} failed scripts",
            classifications.len()
        )));
    }

    let executed = totals.success + failed_total;
    let level_count = |level: ProjectLevel| projects.iter().filter(|p| p.level == level).count();
    let level_denominator = level_count(ProjectLevel::Full)
        + level_count(ProjectLevel::Partial)
        + level_count(ProjectLevel::None);

    let rates = Rates {
        script_success_pct: pct2(totals.success, executed),
        full_pct: pct2(level_count(ProjectLevel::Full), level_denominator),
        partial_pct: pct2(level_count(ProjectLevel::Partial), level_denominator),
        none_pct: pct2(level_count(ProjectLevel::None), level_denominator),
    };

    let mut error_breakdown: BTreeMap<String, CategoryCount> = ErrorCategory::ALL
        .iter()
        .map(|c| {
            (
                c.as_str().to_string(),
                CategoryCount {
                    count: 0,
                    pct: None,
                },
            )
        })
        .collect();
    for classification in classifications {
        error_breakdown
            .get_mut(classification.category.as_str())
            .expect("all categories present")
            .count += 1;
    }
    for entry in error_breakdown.values_mut() {
        entry.pct = pct1(entry.count, failed_total);
    }

    let inventory_summary = summarize_inventories(inventories);

    let mut lints_summary: BTreeMap<String, usize> = BTreeMap::new();
    for lint in lints {
        let key = serde_json::to_value(lint.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_else(|| format!("{:?}", lint.kind));
        *lints_summary.entry(key).or_insert(0) += 1;
    }

    Ok(AuditReport {
        schema: 1,
        totals,
        rates,
        error_breakdown,
        inventory_summary,
        lints_summary,
        run_metadata,
        projects,
    })
}

fn summarize_inventories(inventories: &[ReproFileInventory]) -> InventorySummary {
    let n = inventories.len();
    let mut rows = Vec::new();
    let mut pct_sum = 0.0;
    for pattern in REPRO_FILE_PATTERNS {
        let count = inventories
            .iter()
            .filter(|inv| inv.present.get(pattern).is_some_and(|v| !v.is_empty()))
            .count();
        let pct = pct1(count, n);
        pct_sum += pct.unwrap_or(0.0);
        rows.push(InventoryRow {
            pattern: pattern.to_string(),
            count,
            pct,
        });
    }
    let no_file_count = inventories.iter().filter(|inv| !inv.has_any).count();
    let no_dependency_file = (n > 0).then(|| InventoryRow {
        pattern: "No dependency file".to_string(),
        count: no_file_count,
        pct: Some(round_half_up(100.0 - pct_sum, 1)),
    });
    InventorySummary {
        projects: n,
        rows,
        no_dependency_file,
    }
}

/// Render a report in the requested format. JSON is the canonical schema
/// with stable field order; CSV flattens per-project rows; Markdown renders
/// the totals, the inventory table and the category breakdown.
pub fn emit_report(report: &AuditReport, format: ReportFormat) -> Result<String, ReportError> {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)
                .map_err(|e| ReportError::InconsistentInputs(e.to_string()))?;
            text.push('\n');
            Ok(text)
        }
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Markdown => Ok(emit_markdown(report)),
    }
}

fn emit_csv(report: &AuditReport) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["project_id", "level", "n_scripts", "n_success"])
        .map_err(|e| ReportError::InconsistentInputs(e.to_string()))?;
    for project in &report.projects {
        let level = serde_json::to_value(project.level)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        writer
            .write_record([
                project.project_id.clone(),
                level,
                project.n_scripts.to_string(),
                project.n_success.to_string(),
            ])
            .map_err(|e| ReportError::InconsistentInputs(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| ReportError::InconsistentInputs(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::InconsistentInputs(e.to_string()))
}

fn fmt_pct(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{v}%"),
        None => "n/a".to_string(),
    }
}

fn emit_markdown(report: &AuditReport) -> String {
    let mut md = String::new();
    md.push_str("# Reproducibility Audit Report\n\n");
    md.push_str("## Totals\n\n");
    let t = &report.totals;
    md.push_str(&format!(
        "- projects: {}\n- scripts: {}\n- success: {}\n- failed: {}\n- timeout: {}\n- not run: {}\n\n",
        t.projects, t.scripts, t.success, t.failed, t.timeout, t.not_run
    ));
    md.push_str("## Rates\n\n");
    let r = &report.rates;
    md.push_str(&format!(
        "- script success: {}\n- full projects: {}\n- partial projects: {}\n- none projects: {}\n\n",
        fmt_pct(r.script_success_pct),
        fmt_pct(r.full_pct),
        fmt_pct(r.partial_pct),
        fmt_pct(r.none_pct)
    ));

    md.push_str("## Reproducibility-related files\n\n");
    md.push_str("| Dependency file | Projects | Percentage |\n|---|---:|---:|\n");
    for row in &report.inventory_summary.rows {
        md.push_str(&format!(
            "| `{}` | {} | {} |\n",
            row.pattern,
            row.count,
            fmt_pct(row.pct)
        ));
    }
    if let Some(row) = &report.inventory_summary.no_dependency_file {
        md.push_str(&format!(
            "| {} | {} | {} |\n",
            row.pattern,
            row.count,
            fmt_pct(row.pct)
        ));
    }
    md.push('\n');

    md.push_str("## Execution errors by category\n\n");
    md.push_str("| Category | Count | Percent of failed |\n|---|---:|---:|\n");
    for (category, entry) in &report.error_breakdown {
        if entry.count > 0 {
            md.push_str(&format!(
                "| {} | {} | {} |\n",
                category,
                entry.count,
                fmt_pct(entry.pct)
            ));
        }
    }
    md.push('\n');

    if !report.lints_summary.is_empty() {
        md.push_str("## Portability lints\n\n");
        for (kind, count) in &report.lints_summary {
            md.push_str(&format!("- {kind}: {count}\n"));
        }
        md.push('\n');
    }

    md.push_str("## Run metadata\n\n");
    let m = &report.run_metadata;
    md.push_str(&format!(
        "- pipeline version: {}\n- pattern table: `{}`\n- runtime pin: {}\n- started: {}\n- finished: {}\n",
        m.pipeline_version, m.pattern_table_hash, m.runtime_pin, m.started_at, m.finished_at
    ));
    md
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Classifier;

    fn build(project_id: &str, status: BuildStatus) -> BuildRecord {
        BuildRecord {
            project_id: project_id.to_string(),
            status,
            image_tag: (status == BuildStatus::Built).then(|| "t".into()),
            build_log: String::new(),
            duration_s: 0.0,
        }
    }

    fn record(project_id: &str, script: &str, status: ExecStatus) -> ExecutionRecord {
        ExecutionRecord {
            project_id: project_id.to_string(),
            script: script.to_string(),
            status,
            exit_code: match status {
                ExecStatus::Success => Some(0),
                ExecStatus::Failed => Some(1),
                _ => None,
            },
            log: match status {
                ExecStatus::Failed => "Error: object 'x' not found".to_string(),
                ExecStatus::Timeout => {
                    format!("{} 1s", crate::exec::TIMEOUT_MARKER)
                }
                _ => String::new(),
            },
            duration_s: 0.0,
            synthetic: true,
        }
    }

    fn metadata() -> RunMetadata {
        RunMetadata {
            pipeline_version: "0.1.0".into(),
            pattern_table_hash: "h".into(),
            runtime_pin: "r-4.3-2024-01-10".into(),
            started_at: "1970-01-01T00:00:00Z".into(),
            finished_at: "1970-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn project_levels() {
        let b = build("p", BuildStatus::Built);
        let full = project_status(
            &[record("p", "a.R", ExecStatus::Success), record("p", "b.R", ExecStatus::Success)],
            &b,
        );
        assert_eq!(full.level, ProjectLevel::Full);

        let partial = project_status(
            &[record("p", "a.R", ExecStatus::Success), record("p", "b.R", ExecStatus::Failed)],
            &b,
        );
        assert_eq!(partial.level, ProjectLevel::Partial);

        let none = project_status(
            &[
                record("p", "a.R", ExecStatus::Failed),
                record("p", "b.R", ExecStatus::Failed),
                record("p", "c.R", ExecStatus::Failed),
            ],
            &b,
        );
        assert_eq!(none.level, ProjectLevel::None);

        // Timeout is non-success.
        let t = project_status(
            &[record("p", "a.R", ExecStatus::Success), record("p", "b.R", ExecStatus::Timeout)],
            &b,
        );
        assert_eq!(t.level, ProjectLevel::Partial);

        let bf = project_status(&[], &build("p", BuildStatus::BuildFailed));
        assert_eq!(bf.level, ProjectLevel::BuildFailed);
        let sk = project_status(&[], &build("p", BuildStatus::Skipped));
        assert_eq!(sk.level, ProjectLevel::NotRun);
    }

    fn synthetic_world(
        spec: &[(&str, &[ExecStatus])],
    ) -> (Vec<ProjectStatus>, Vec<ExecutionRecord>, Vec<ErrorClassification>) {
        let mut statuses = Vec::new();
        let mut records = Vec::new();
        for (id, outcomes) in spec {
            let b = build(id, BuildStatus::Built);
            let recs: Vec<ExecutionRecord> = outcomes
                .iter()
                .enumerate()
                .map(|(i, s)| record(id, &format!("s{i}.R"), *s))
                .collect();
            statuses.push(project_status(&recs, &b));
            records.extend(recs);
        }
        let classifications = Classifier::builtin().classify_batch(&records);
        (statuses, records, classifications)
    }

    #[test]
    fn aggregate_paper_scale_arithmetic() {
        // 119 successes of 460 executed.
        let mut spec: Vec<(&str, &[ExecStatus])> = Vec::new();
        let ids: Vec<String> = (0..460).map(|i| format!("p{i:03}")).collect();
        let mut plans: Vec<&[ExecStatus]> = Vec::new();
        for i in 0..460 {
            plans.push(if i < 119 {
                &[ExecStatus::Success]
            } else {
                &[ExecStatus::Failed]
            });
        }
        for (id, plan) in ids.iter().zip(plans) {
            spec.push((id.as_str(), plan));
        }
        let (statuses, records, classifications) = synthetic_world(&spec);
        let report = aggregate(&statuses, &records, &classifications, &[], &[], metadata()).unwrap();
        assert_eq!(report.rates.script_success_pct, Some(25.87));
    }

    #[test]
    fn aggregate_project_level_percentages() {
        // 40 full, 34 partial, 175 none of 249.
        let mut spec: Vec<(String, Vec<ExecStatus>)> = Vec::new();
        for i in 0..40 {
            spec.push((format!("f{i:03}"), vec![ExecStatus::Success]));
        }
        for i in 0..34 {
            spec.push((
                format!("p{i:03}"),
                vec![ExecStatus::Success, ExecStatus::Failed],
            ));
        }
        for i in 0..175 {
            spec.push((format!("n{i:03}"), vec![ExecStatus::Failed]));
        }
        let borrowed: Vec<(&str, &[ExecStatus])> = spec
            .iter()
            .map(|(id, v)| (id.as_str(), v.as_slice()))
            .collect();
        let (statuses, records, classifications) = synthetic_world(&borrowed);
        let report = aggregate(&statuses, &records, &classifications, &[], &[], metadata()).unwrap();
        assert_eq!(report.rates.full_pct, Some(16.06));
        assert_eq!(report.rates.partial_pct, Some(13.65));
        assert_eq!(report.rates.none_pct, Some(70.28));
        // Conservation.
        let sum: usize = report.projects.iter().map(|p| p.n_scripts).sum();
        assert_eq!(sum, report.totals.scripts);
    }

    #[test]
    fn zero_executed_undefined_rates() {
        let statuses = vec![unretrievable_status("gone1")];
        let report = aggregate(&statuses, &[], &[], &[], &[], metadata()).unwrap();
        assert_eq!(report.rates.script_success_pct, None);
        assert_eq!(report.rates.full_pct, None);
        let json = emit_report(&report, ReportFormat::Json).unwrap();
        assert!(json.contains("\"script_success_pct\": null"));
    }

    #[test]
    fn unknown_project_rejected() {
        let statuses = vec![unretrievable_status("known")];
        let records = vec![record("ghost", "a.R", ExecStatus::Success)];
        let err = aggregate(&statuses, &records, &[], &[], &[], metadata()).unwrap_err();
        assert!(matches!(err, ReportError::InconsistentInputs(_)));
    }

    #[test]
    fn permutation_invariance() {
        let (statuses, records, classifications) = synthetic_world(&[
            ("aa", &[ExecStatus::Success, ExecStatus::Failed]),
            ("bb", &[ExecStatus::Failed]),
            ("cc", &[ExecStatus::Success]),
        ]);
        let a = aggregate(&statuses, &records, &classifications, &[], &[], metadata()).unwrap();
        let mut statuses_r = statuses.clone();
        statuses_r.reverse();
        let mut records_r = records.clone();
        records_r.reverse();
        let mut class_r = classifications.clone();
        class_r.reverse();
        let b = aggregate(&statuses_r, &records_r, &class_r, &[], &[], metadata()).unwrap();
        assert_eq!(
            emit_report(&a, ReportFormat::Json).unwrap(),
            emit_report(&b, ReportFormat::Json).unwrap()
        );
    }

    #[test]
    fn breakdown_percentages_sum_to_100() {
        let (statuses, records, classifications) = synthetic_world(&[
            ("aa", &[ExecStatus::Failed, ExecStatus::Failed]),
            ("bb", &[ExecStatus::Failed, ExecStatus::Timeout]),
        ]);
        let report = aggregate(&statuses, &records, &classifications, &[], &[], metadata()).unwrap();
        let sum: f64 = report
            .error_breakdown
            .values()
            .filter_map(|e| e.pct)
            .sum();
        assert!((sum - 100.0).abs() <= 0.1, "sum {sum}");
        let count_sum: usize = report.error_breakdown.values().map(|e| e.count).sum();
        assert_eq!(count_sum, report.totals.failed + report.totals.timeout);
    }

    #[test]
    fn csv_has_per_project_rows() {
        let (statuses, records, classifications) = synthetic_world(&[
            ("bb", &[ExecStatus::Failed]),
            ("aa", &[ExecStatus::Success]),
        ]);
        let report = aggregate(&statuses, &records, &classifications, &[], &[], metadata()).unwrap();
        let csv_text = emit_report(&report, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv_text.lines().collect();
        assert_eq!(lines[0], "project_id,level,n_scripts,n_success");
        assert_eq!(lines[1], "aa,full,1,1");
        assert_eq!(lines[2], "bb,none,1,0");
    }

    #[test]
    fn json_round_trip() {
        let (statuses, records, classifications) =
            synthetic_world(&[("aa", &[ExecStatus::Success])]);
        let report = aggregate(&statuses, &records, &classifications, &[], &[], metadata()).unwrap();
        let json = emit_report(&report, ReportFormat::Json).unwrap();
        let parsed: AuditReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, report);
        // Markdown renders without panicking and includes the tables.
        let md = emit_report(&report, ReportFormat::Markdown).unwrap();
        assert!(md.contains("## Totals"));
        assert!(md.contains("Dependency file"));
    }

    #[test]
    fn empty_report_is_valid() {
        let report = aggregate(&[], &[], &[], &[], &[], metadata()).unwrap();
        for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
            assert!(!emit_report(&report, format).unwrap().is_empty());
        }
    }
}
