//! Reproducibility-file scanning and environment-spec generation: a
//! DCF-format `DESCRIPTION`, an idempotent `install.R`, and a `runtime.txt`
//! pin, laid out exactly as a repo2docker-compatible builder consumes them.

use crate::deps::{validate_package_name, DependencySet};
use crate::ingest::ProjectManifest;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Filenames that document a computational R environment. Scanning matches
/// basenames case-sensitively anywhere in the tree.
pub const REPRO_FILE_PATTERNS: [&str; 10] = [
    "renv.lock",
    "sessionInfo.txt",
    "sessionInfo.RData",
    ".Rprofile",
    "DESCRIPTION",
    "dependencies.R",
    "dependency.R",
    "Dockerfile",
    "environment.yml",
    "install.R",
];

pub const DEFAULT_RUNTIME_PIN: &str = "r-4.3-2024-01-10";
pub const DEFAULT_CRAN_SNAPSHOT: &str = "https://packagemanager.posit.co/cran/2024-01-10";

/// Presence of reproducibility-related files in one project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproFileInventory {
    pub project_id: String,
    /// Every pattern is reported, empty or not.
    pub present: BTreeMap<String, Vec<String>>,
    pub has_any: bool,
}

/// Generated environment specification for one project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub description_text: String,
    pub install_script: String,
    pub runtime_pin: String,
    pub source_packages: Vec<String>,
    pub remotes: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EnvSpecError {
    #[error("generated DESCRIPTION failed self-validation: {0:?}")]
    SelfValidation(Vec<Violation>),
    #[error("dependency set contains invalid package name {0:?}")]
    InvalidDependency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One DESCRIPTION defect found by [`validate_description`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub line: u32,
    pub reason: ViolationReason,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationReason {
    SyntaxError,
    MissingRequiredField,
    MalformedList,
    InvalidPackageName,
    DuplicateField,
}

/// Scan a manifest for the reproducibility-file patterns. Case-sensitive
/// basename match anywhere in the tree.
pub fn scan_repro_files(manifest: &ProjectManifest) -> ReproFileInventory {
    let mut present: BTreeMap<String, Vec<String>> = REPRO_FILE_PATTERNS
        .iter()
        .map(|p| (p.to_string(), Vec::new()))
        .collect();
    for file in &manifest.files {
        let basename = file.path.rsplit('/').next().unwrap_or(&file.path);
        if let Some(paths) = present.get_mut(basename) {
            paths.push(file.path.clone());
        }
    }
    let has_any = present.values().any(|v| !v.is_empty());
    ReproFileInventory {
        project_id: manifest.project_ref.project_id.clone(),
        present,
        has_any,
    }
}

/// Generate the environment spec for a project-level dependency set.
///
/// An empty set is not an error: scripts using only base R still
/// containerize, with no Imports line. Generation always re-parses its own
/// output; a spec that fails its own parse is a hard internal error.
pub fn generate_description(
    deps: &DependencySet,
    project_id: &str,
    runtime_pin: &str,
    cran_snapshot: &str,
) -> Result<EnvironmentSpec, EnvSpecError> {
    for name in &deps.packages {
        if !validate_package_name(name).valid {
            return Err(EnvSpecError::InvalidDependency(name.clone()));
        }
    }
    let packages: Vec<String> = deps.packages.iter().cloned().collect();
    let remotes: Vec<String> = deps.remotes.iter().cloned().collect();

    let mut text = String::new();
    text.push_str(&format!("Package: {}\n", sanitize_package_field(project_id)));
    text.push_str(&format!(
        "Title: Execution Environment for Project {project_id}\n"
    ));
    text.push_str("Version: 0.1.0\n");
    text.push_str(
        "Description: Auto-generated environment specification listing the R\n    packages this project's scripts load.\n",
    );
    text.push_str("Encoding: UTF-8\n");
    if !packages.is_empty() {
        text.push_str(&format!("Imports: {}\n", packages.join(", ")));
    }
    if !remotes.is_empty() {
        text.push_str(&format!("Remotes: {}\n", remotes.join(", ")));
    }

    let violations = validate_description(&text);
    if !violations.is_empty() {
        return Err(EnvSpecError::SelfValidation(violations));
    }

    Ok(EnvironmentSpec {
        description_text: text,
        install_script: render_install_script(&packages, &remotes, cran_snapshot),
        runtime_pin: runtime_pin.to_string(),
        source_packages: packages,
        remotes,
    })
}

fn sanitize_package_field(project_id: &str) -> String {
    let cleaned: String = project_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '.' })
        .collect();
    format!("osf.{cleaned}")
}

fn render_install_script(packages: &[String], remotes: &[String], cran_snapshot: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "options(repos = c(CRAN = \"{cran_snapshot}\"))\n"
    ));
    if packages.is_empty() && remotes.is_empty() {
        s.push_str("# No packages to install.\n");
        return s;
    }
    if !packages.is_empty() {
        let quoted: Vec<String> = packages.iter().map(|p| format!("\"{p}\"")).collect();
        s.push_str(&format!("pkgs <- c({})\n", quoted.join(", ")));
        s.push_str("for (p in pkgs) {\n");
        s.push_str("    if (!requireNamespace(p, quietly = TRUE)) {\n");
        s.push_str("        install.packages(p)\n");
        s.push_str("    }\n");
        s.push_str("}\n");
    }
    if !remotes.is_empty() {
        s.push_str("if (!requireNamespace(\"remotes\", quietly = TRUE)) {\n");
        s.push_str("    install.packages(\"remotes\")\n");
        s.push_str("}\n");
        let quoted: Vec<String> = remotes.iter().map(|r| format!("\"{r}\"")).collect();
        s.push_str(&format!("for (r in c({})) {{\n", quoted.join(", ")));
        s.push_str("    remotes::install_github(r)\n");
        s.push_str("}\n");
    }
    s
}

/// Parse DCF text into ordered (key, value) pairs. Continuation lines start
/// with whitespace and append to the previous field.
pub fn parse_dcf(text: &str) -> Result<Vec<(String, String)>, Violation> {
    let mut fields: Vec<(String, String)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx as u32 + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with(' ') || line.starts_with('\t') {
            match fields.last_mut() {
                Some((_, value)) => {
                    value.push(' ');
                    value.push_str(line.trim());
                }
                None => {
                    return Err(Violation {
                        line: lineno,
                        reason: ViolationReason::SyntaxError,
                        detail: "continuation line before any field".to_string(),
                    });
                }
            }
            continue;
        }
        match line.split_once(':') {
            Some((key, value)) if !key.trim().is_empty() && !key.contains(' ') => {
                fields.push((key.trim().to_string(), value.trim().to_string()));
            }
            _ => {
                return Err(Violation {
                    line: lineno,
                    reason: ViolationReason::SyntaxError,
                    detail: format!("not a `Key: value` line: {line:?}"),
                });
            }
        }
    }
    Ok(fields)
}

/// Check DESCRIPTION text: DCF syntax, required fields, well-formed
/// Imports/Remotes lists with valid package names. Empty result means the
/// text parses cleanly.
pub fn validate_description(text: &str) -> Vec<Violation> {
    let fields = match parse_dcf(text) {
        Ok(fields) => fields,
        Err(v) => return vec![v],
    };
    let mut violations = Vec::new();
    let mut seen = BTreeMap::new();
    for (key, _) in &fields {
        *seen.entry(key.clone()).or_insert(0u32) += 1;
    }
    for (key, count) in &seen {
        if *count > 1 {
            violations.push(Violation {
                line: 0,
                reason: ViolationReason::DuplicateField,
                detail: format!("field {key} appears {count} times"),
            });
        }
    }
    for required in ["Package", "Version"] {
        if !seen.contains_key(required) {
            violations.push(Violation {
                line: 0,
                reason: ViolationReason::MissingRequiredField,
                detail: format!("missing {required}: field"),
            });
        }
    }
    for list_field in ["Imports", "Depends", "Suggests"] {
        if let Some((_, value)) = fields.iter().find(|(k, _)| k == list_field) {
            let line = field_line(text, list_field);
            for item in value.split(',') {
                let item = item.trim();
                if item.is_empty() {
                    violations.push(Violation {
                        line,
                        reason: ViolationReason::MalformedList,
                        detail: format!("{list_field} has an empty element"),
                    });
                    continue;
                }
                // Strip a version constraint like `pkg (>= 1.0)`.
                let name = item.split('(').next().unwrap_or(item).trim();
                if !validate_package_name(name).valid && !crate::deps::BASE_R_PACKAGES.contains(&name) && name != "R" {
                    violations.push(Violation {
                        line,
                        reason: ViolationReason::InvalidPackageName,
                        detail: format!("{list_field} lists invalid name {name:?}"),
                    });
                }
            }
        }
    }
    violations
}

fn field_line(text: &str, key: &str) -> u32 {
    for (idx, line) in text.lines().enumerate() {
        if line.starts_with(key) && line[key.len()..].starts_with(':') {
            return idx as u32 + 1;
        }
    }
    0
}

/// Extract the Imports list from DESCRIPTION text (empty when absent).
pub fn parse_imports(text: &str) -> Vec<String> {
    parse_dcf(text)
        .ok()
        .and_then(|fields| {
            fields
                .into_iter()
                .find(|(k, _)| k == "Imports")
                .map(|(_, v)| {
                    v.split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                })
        })
        .unwrap_or_default()
}

/// Write the spec into a staging directory in builder layout. A pre-existing
/// user DESCRIPTION is preserved as `DESCRIPTION.orig` before being
/// superseded.
pub fn stage_environment(spec: &EnvironmentSpec, staging_dir: &Path) -> Result<(), EnvSpecError> {
    fs::create_dir_all(staging_dir)?;
    let description = staging_dir.join("DESCRIPTION");
    if description.is_file() {
        fs::rename(&description, staging_dir.join("DESCRIPTION.orig"))?;
    }
    fs::write(&description, &spec.description_text)?;
    fs::write(staging_dir.join("install.R"), &spec.install_script)?;
    fs::write(staging_dir.join("runtime.txt"), format!("{}\n", spec.runtime_pin))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FileEntry, ProjectManifest, ProjectRef, ProjectSource};

    fn manifest(paths: &[&str]) -> ProjectManifest {
        ProjectManifest {
            project_ref: ProjectRef {
                project_id: "abcde".into(),
                source: ProjectSource::Remote,
                local_root: None,
            },
            files: paths
                .iter()
                .map(|p| FileEntry {
                    path: p.to_string(),
                    size: 1,
                    sha256: "h".into(),
                })
                .collect(),
            r_scripts: Vec::new(),
            missing_refs: Vec::new(),
        }
    }

    fn deps_with(names: &[&str]) -> DependencySet {
        DependencySet {
            script: String::new(),
            packages: names.iter().map(|s| s.to_string()).collect(),
            ..DependencySet::default()
        }
    }

    #[test]
    fn scan_finds_nested_description() {
        let inv = scan_repro_files(&manifest(&["analysis/DESCRIPTION", "a.R"]));
        assert_eq!(inv.present["DESCRIPTION"], vec!["analysis/DESCRIPTION"]);
        assert!(inv.has_any);
    }

    #[test]
    fn scan_reports_every_pattern_even_empty() {
        let inv = scan_repro_files(&manifest(&["a.R"]));
        assert_eq!(inv.present.len(), REPRO_FILE_PATTERNS.len());
        assert!(!inv.has_any);
    }

    #[test]
    fn scan_is_case_sensitive() {
        let inv = scan_repro_files(&manifest(&["description", "dockerfile"]));
        assert!(!inv.has_any);
        let inv = scan_repro_files(&manifest(&["renv.lock"]));
        assert!(!inv.present["renv.lock"].is_empty());
    }

    #[test]
    fn generate_sorted_imports() {
        let spec = generate_description(
            &deps_with(&["lme4", "dplyr"]),
            "abcde",
            DEFAULT_RUNTIME_PIN,
            DEFAULT_CRAN_SNAPSHOT,
        )
        .unwrap();
        assert!(spec.description_text.contains("Imports: dplyr, lme4\n"));
        assert!(spec.description_text.contains("Package: osf.abcde\n"));
        assert!(validate_description(&spec.description_text).is_empty());
    }

    #[test]
    fn generate_empty_set_is_valid() {
        let spec = generate_description(
            &deps_with(&[]),
            "abcde",
            DEFAULT_RUNTIME_PIN,
            DEFAULT_CRAN_SNAPSHOT,
        )
        .unwrap();
        assert!(!spec.description_text.contains("Imports:"));
        assert!(validate_description(&spec.description_text).is_empty());
        assert!(spec.install_script.contains("No packages to install"));
    }

    #[test]
    fn generate_with_remotes() {
        let mut deps = deps_with(&["papaja"]);
        deps.remotes.insert("crsh/papaja".to_string());
        let spec = generate_description(&deps, "abcde", DEFAULT_RUNTIME_PIN, DEFAULT_CRAN_SNAPSHOT)
            .unwrap();
        assert!(spec.description_text.contains("Remotes: crsh/papaja\n"));
        assert!(spec.description_text.contains("Imports: papaja\n"));
        assert!(spec.install_script.contains("remotes::install_github"));
    }

    #[test]
    fn generate_is_deterministic() {
        let deps = deps_with(&["zoo", "abc", "Matrix2"]);
        let a = generate_description(&deps, "abcde", DEFAULT_RUNTIME_PIN, DEFAULT_CRAN_SNAPSHOT)
            .unwrap();
        let b = generate_description(&deps, "abcde", DEFAULT_RUNTIME_PIN, DEFAULT_CRAN_SNAPSHOT)
            .unwrap();
        assert_eq!(a.description_text, b.description_text);
        assert_eq!(a.install_script, b.install_script);
    }

    #[test]
    fn validate_missing_package_field() {
        let violations = validate_description("Version: 1.0\nImports: dplyr\n");
        assert!(violations
            .iter()
            .any(|v| v.reason == ViolationReason::MissingRequiredField));
    }

    #[test]
    fn validate_malformed_list() {
        let violations =
            validate_description("Package: x\nVersion: 1.0\nImports: dplyr,, lme4\n");
        assert!(violations
            .iter()
            .any(|v| v.reason == ViolationReason::MalformedList));
    }

    #[test]
    fn validate_rejects_scoped_name_in_imports() {
        let violations =
            validate_description("Package: x\nVersion: 1.0\nImports: knitr::opts_chunk\n");
        assert!(violations
            .iter()
            .any(|v| v.reason == ViolationReason::InvalidPackageName));
    }

    #[test]
    fn dcf_continuation_lines() {
        let fields = parse_dcf("Package: x\nDescription: first\n    second line\n").unwrap();
        assert_eq!(fields[1].1, "first second line");
    }

    #[test]
    fn imports_round_trip() {
        let spec = generate_description(
            &deps_with(&["b2", "a1", "c3"]),
            "abcde",
            DEFAULT_RUNTIME_PIN,
            DEFAULT_CRAN_SNAPSHOT,
        )
        .unwrap();
        assert_eq!(parse_imports(&spec.description_text), vec!["a1", "b2", "c3"]);
    }

    #[test]
    fn staging_preserves_user_description() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("DESCRIPTION"), "Package: theirs\n").unwrap();
        let spec = generate_description(
            &deps_with(&["dplyr"]),
            "abcde",
            DEFAULT_RUNTIME_PIN,
            DEFAULT_CRAN_SNAPSHOT,
        )
        .unwrap();
        stage_environment(&spec, dir.path()).unwrap();
        let orig = fs::read_to_string(dir.path().join("DESCRIPTION.orig")).unwrap();
        assert_eq!(orig, "Package: theirs\n");
        let new = fs::read_to_string(dir.path().join("DESCRIPTION")).unwrap();
        assert!(new.contains("Package: osf.abcde"));
        assert!(dir.path().join("install.R").is_file());
        let runtime = fs::read_to_string(dir.path().join("runtime.txt")).unwrap();
        assert_eq!(runtime, format!("{DEFAULT_RUNTIME_PIN}\n"));
    }

    #[test]
    fn no_trailing_whitespace_lf_endings() {
        let spec = generate_description(
            &deps_with(&["dplyr", "lme4"]),
            "abcde",
            DEFAULT_RUNTIME_PIN,
            DEFAULT_CRAN_SNAPSHOT,
        )
        .unwrap();
        assert!(!spec.description_text.contains('\r'));
        for line in spec.description_text.lines() {
            assert_eq!(line, line.trim_end());
        }
    }
}
