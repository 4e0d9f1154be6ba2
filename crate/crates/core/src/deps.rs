//! Dependency inference: turn call sites into a validated package set per
//! script, merge to project level, and emit portability lint findings.
//!
//! Candidate names come from six detection rules (R1–R6); every candidate
//! then passes through [`validate_package_name`], so an invalid name can
//! never reach a [`DependencySet`]'s `packages` field.

use crate::analyzer::{ArgValue, CallSite, Token};
use crate::ingest::ProjectManifest;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Packages that ship with every R distribution; recorded in evidence but
/// excluded from the installable package set.
pub const BASE_R_PACKAGES: [&str; 9] = [
    "base",
    "stats",
    "utils",
    "graphics",
    "grDevices",
    "methods",
    "datasets",
    "tools",
    "parallel",
];

/// Names R reserves; never valid package names.
const RESERVED_WORDS: [&str; 6] = ["TRUE", "FALSE", "NULL", "NA", "Inf", "NaN"];

/// Why a candidate name was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    ReservedWord,
    Numeric,
    ScopedReference,
    Malformed,
    Placeholder,
}

/// A candidate package name with its validation outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageName {
    pub name: String,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
}

/// One detection-rule hit backing a package name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub rule: String,
    pub line: u32,
}

/// A rejected candidate with its call-site evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedName {
    pub name: String,
    pub reason: RejectionReason,
    pub line: u32,
}

/// A load pattern the static analysis saw but could not resolve; reported,
/// never silently dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicMiss {
    pub callee: String,
    pub line: u32,
    pub detail: String,
}

/// Validated dependencies for one script (or, after merging, one project).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencySet {
    pub script: String,
    pub packages: BTreeSet<String>,
    pub rejected: Vec<RejectedName>,
    pub evidence: BTreeMap<String, Vec<Evidence>>,
    /// GitHub-source packages as `owner/name`, for a DESCRIPTION `Remotes`
    /// entry.
    pub remotes: BTreeSet<String>,
    pub dynamic_misses: Vec<DynamicMiss>,
}

/// Portability problems that predict failure in headless, containerized or
/// hosting-constrained environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    AbsolutePath,
    SetwdCall,
    SetwdMissingArg,
    GuiFunction,
    InteractiveApi,
    OversizedFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortabilityFinding {
    pub kind: FindingKind,
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    pub detail: String,
}

/// Classify a raw candidate against the CRAN naming rule
/// (`^[A-Za-z][A-Za-z0-9.]+$`, no trailing dot, length ≥ 2) and the known
/// junk classes that broke real container builds: reserved words, numeric
/// literals, scoped references like `knitr::opts_chunk`, and the extractor
/// placeholder `unknown`. Total: every string gets exactly one outcome.
pub fn validate_package_name(raw: &str) -> PackageName {
    let reject = |reason| PackageName {
        name: raw.to_string(),
        valid: false,
        rejection_reason: Some(reason),
    };
    if raw.contains("::") {
        return reject(RejectionReason::ScopedReference);
    }
    if RESERVED_WORDS.contains(&raw) {
        return reject(RejectionReason::ReservedWord);
    }
    if raw == "unknown" {
        return reject(RejectionReason::Placeholder);
    }
    if !raw.is_empty() && raw.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return reject(RejectionReason::Numeric);
    }
    let mut chars = raw.chars();
    let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic());
    let tail_ok = chars.all(|c| c.is_ascii_alphanumeric() || c == '.');
    if !head_ok || !tail_ok || raw.len() < 2 || raw.ends_with('.') {
        return reject(RejectionReason::Malformed);
    }
    PackageName {
        name: raw.to_string(),
        valid: true,
        rejection_reason: None,
    }
}

/// Function names whose string-vector or identifier argument names packages
/// to load (rule R6's surrounding apply forms).
const APPLY_CALLEES: [&str; 6] = ["lapply", "sapply", "vapply", "purrr::walk", "purrr::map", "walk"];

/// Load functions recognized as the function argument inside apply forms.
const LOAD_FUNCTIONS: [&str; 4] = ["library", "require", "requireNamespace", "loadNamespace"];

struct Candidate {
    raw: String,
    rule: &'static str,
    line: u32,
    remote: Option<String>,
}

/// Apply detection rules R1–R6 to the call sites of one script and validate
/// every candidate. An empty set is a valid result.
pub fn infer_dependencies(calls: &[CallSite], script: &str) -> DependencySet {
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut misses: Vec<DynamicMiss> = Vec::new();

    for call in calls {
        collect_candidates(call, &mut candidates, &mut misses);
    }

    let mut set = DependencySet {
        script: script.to_string(),
        ..DependencySet::default()
    };
    for cand in candidates {
        let validated = validate_package_name(&cand.raw);
        if validated.valid {
            set.evidence
                .entry(validated.name.clone())
                .or_default()
                .push(Evidence {
                    rule: cand.rule.to_string(),
                    line: cand.line,
                });
            if !BASE_R_PACKAGES.contains(&validated.name.as_str()) {
                set.packages.insert(validated.name.clone());
                if let Some(remote) = cand.remote {
                    set.remotes.insert(remote);
                }
            }
        } else {
            set.rejected.push(RejectedName {
                name: validated.name,
                reason: validated.rejection_reason.unwrap(),
                line: cand.line,
            });
        }
    }
    set.dynamic_misses = misses;
    set
}

fn collect_candidates(call: &CallSite, out: &mut Vec<Candidate>, misses: &mut Vec<DynamicMiss>) {
    let callee = call.callee.as_str();
    let line = call.line;

    // R3: qualified call prefix. Applies to every `pkg::fn(...)` form,
    // including `pkg::obj$method(...)`; only the prefix is ever a candidate.
    if let Some(prefix) = callee.split("::").next() {
        if callee.contains("::") && !prefix.is_empty() {
            out.push(Candidate {
                raw: prefix.to_string(),
                rule: "R3",
                line,
                remote: None,
            });
        }
    }

    match callee {
        // R1: library(x) / require(x), bare or quoted; a resolved string
        // vector (from `character.only = TRUE` indirection) also counts.
        "library" | "require" => {
            if let Some(arg) = first_positional(call) {
                match &arg.value {
                    ArgValue::Identifier { text } => out.push(Candidate {
                        raw: text.clone(),
                        rule: "R1",
                        line,
                        remote: None,
                    }),
                    ArgValue::StringLiteral { text } => out.push(Candidate {
                        raw: text.clone(),
                        rule: "R1",
                        line,
                        remote: None,
                    }),
                    ArgValue::StringVector { values } => {
                        for v in values {
                            out.push(Candidate {
                                raw: v.clone(),
                                rule: "R1",
                                line,
                                remote: None,
                            });
                        }
                    }
                    ArgValue::Opaque => misses.push(DynamicMiss {
                        callee: callee.to_string(),
                        line,
                        detail: "load call with computed package argument".to_string(),
                    }),
                }
                if character_only(call) && matches!(arg.value, ArgValue::Identifier { .. }) {
                    misses.push(DynamicMiss {
                        callee: callee.to_string(),
                        line,
                        detail: "character.only load through an unresolved variable".to_string(),
                    });
                }
            }
        }
        // R2: requireNamespace("x") / loadNamespace("x"), string literal only.
        "requireNamespace" | "loadNamespace" => {
            if let Some(arg) = first_positional(call) {
                match &arg.value {
                    ArgValue::StringLiteral { text } => out.push(Candidate {
                        raw: text.clone(),
                        rule: "R2",
                        line,
                        remote: None,
                    }),
                    ArgValue::StringVector { values } => {
                        for v in values {
                            out.push(Candidate {
                                raw: v.clone(),
                                rule: "R2",
                                line,
                                remote: None,
                            });
                        }
                    }
                    _ => {}
                }
            }
        }
        // R4: pacman::p_load(a, b, ...): every bare or string argument.
        "pacman::p_load" | "p_load" => {
            for arg in &call.args {
                if arg.name.is_some() {
                    continue;
                }
                match &arg.value {
                    ArgValue::Identifier { text } | ArgValue::StringLiteral { text } => {
                        out.push(Candidate {
                            raw: text.clone(),
                            rule: "R4",
                            line,
                            remote: None,
                        });
                    }
                    ArgValue::StringVector { values } => {
                        for v in values {
                            out.push(Candidate {
                                raw: v.clone(),
                                rule: "R4",
                                line,
                                remote: None,
                            });
                        }
                    }
                    ArgValue::Opaque => {}
                }
            }
        }
        // R5: install.packages("x") and GitHub installs; the slash form
        // yields the last path segment plus a remote provenance entry.
        "install.packages" => {
            if let Some(arg) = first_positional(call) {
                match &arg.value {
                    ArgValue::StringLiteral { text } => out.push(Candidate {
                        raw: text.clone(),
                        rule: "R5",
                        line,
                        remote: None,
                    }),
                    ArgValue::StringVector { values } => {
                        for v in values {
                            out.push(Candidate {
                                raw: v.clone(),
                                rule: "R5",
                                line,
                                remote: None,
                            });
                        }
                    }
                    _ => {}
                }
            }
        }
        "devtools::install_github" | "remotes::install_github" | "install_github" => {
            if let Some(arg) = first_positional(call) {
                if let ArgValue::StringLiteral { text } = &arg.value {
                    let name = text.rsplit('/').next().unwrap_or(text);
                    let remote = text.contains('/').then(|| text.clone());
                    out.push(Candidate {
                        raw: name.to_string(),
                        rule: "R5",
                        line,
                        remote,
                    });
                }
            }
        }
        // R6: apply forms mapping a load function over a string vector.
        c if APPLY_CALLEES.contains(&c) => {
            let loads = call.args.iter().any(|a| {
                matches!(&a.value, ArgValue::Identifier { text } if LOAD_FUNCTIONS.contains(&text.as_str()))
            });
            if loads {
                let mut found_vector = false;
                for arg in &call.args {
                    if let ArgValue::StringVector { values } = &arg.value {
                        found_vector = true;
                        for v in values {
                            out.push(Candidate {
                                raw: v.clone(),
                                rule: "R6",
                                line,
                                remote: None,
                            });
                        }
                    }
                }
                if !found_vector {
                    misses.push(DynamicMiss {
                        callee: callee.to_string(),
                        line,
                        detail: "dynamic load over an unresolved vector".to_string(),
                    });
                }
            }
        }
        _ => {}
    }
}

fn first_positional(call: &CallSite) -> Option<&crate::analyzer::CallArg> {
    call.args.iter().find(|a| a.name.is_none())
}

fn character_only(call: &CallSite) -> bool {
    call.args.iter().any(|a| {
        a.name.as_deref() == Some("character.only")
            && matches!(&a.value, ArgValue::Identifier { text } if text == "TRUE")
    })
}

/// Union per-script sets into a project-level set. Associative and
/// commutative: evidence maps merge, rejected lists concatenate with their
/// script attribution kept in per-entry text.
pub fn merge_project_dependencies(sets: &[DependencySet]) -> DependencySet {
    let mut merged = DependencySet {
        script: String::new(),
        ..DependencySet::default()
    };
    let mut ordered: Vec<&DependencySet> = sets.iter().collect();
    ordered.sort_by(|a, b| a.script.cmp(&b.script));
    for set in ordered {
        merged.packages.extend(set.packages.iter().cloned());
        merged.remotes.extend(set.remotes.iter().cloned());
        for (name, ev) in &set.evidence {
            merged
                .evidence
                .entry(name.clone())
                .or_default()
                .extend(ev.iter().cloned());
        }
        merged.rejected.extend(set.rejected.iter().cloned());
        merged.dynamic_misses.extend(set.dynamic_misses.iter().cloned());
    }
    merged
}

/// GUI and interactive-only functions that cannot work headless.
const GUI_FUNCTIONS: [&str; 4] = ["View", "file.choose", "winDialog", "x11"];

/// Calls that consume a file path argument.
const FILE_CONSUMERS: [&str; 24] = [
    "read.csv",
    "read.csv2",
    "read.table",
    "read.delim",
    "read.delim2",
    "readRDS",
    "readLines",
    "read_csv",
    "read_tsv",
    "read_delim",
    "read_excel",
    "read.xlsx",
    "read_sav",
    "fread",
    "load",
    "source",
    "scan",
    "file",
    "setwd",
    "write.csv",
    "write.table",
    "saveRDS",
    "ggsave",
    "pdf",
];

const OVERSIZE_LIMIT_BYTES: u64 = 100 * 1024 * 1024;

fn is_absolute_path_literal(text: &str) -> bool {
    if text.starts_with("/Users/") || text.starts_with("/home/") {
        return true;
    }
    let bytes = text.as_bytes();
    bytes.len() > 2
        && bytes[0].is_ascii_alphabetic()
        && bytes[1] == b':'
        && (bytes[2] == b'/' || bytes[2] == b'\\')
}

/// Static portability lints over one script's analysis plus the project
/// manifest (for file sizes). Oversized-file findings carry no line.
pub fn lint_portability(
    _tokens: &[Token],
    calls: &[CallSite],
    script: &str,
    manifest: Option<&ProjectManifest>,
) -> Vec<PortabilityFinding> {
    let mut findings = Vec::new();

    for call in calls {
        let callee = call.callee.as_str();
        let base = callee.rsplit("::").next().unwrap_or(callee);

        if FILE_CONSUMERS.contains(&base) {
            for arg in &call.args {
                if let ArgValue::StringLiteral { text } = &arg.value {
                    if is_absolute_path_literal(text) {
                        findings.push(PortabilityFinding {
                            kind: FindingKind::AbsolutePath,
                            path: script.to_string(),
                            line: Some(call.line),
                            detail: format!("{callee}() receives absolute path {text:?}"),
                        });
                    }
                }
            }
        }

        if base == "setwd" {
            if call.args.is_empty() {
                findings.push(PortabilityFinding {
                    kind: FindingKind::SetwdMissingArg,
                    path: script.to_string(),
                    line: Some(call.line),
                    detail: "setwd() called without a directory argument".to_string(),
                });
            } else {
                findings.push(PortabilityFinding {
                    kind: FindingKind::SetwdCall,
                    path: script.to_string(),
                    line: Some(call.line),
                    detail: "setwd() hardcodes a working directory".to_string(),
                });
            }
        }

        if GUI_FUNCTIONS.contains(&base) && !callee.contains("::") {
            findings.push(PortabilityFinding {
                kind: FindingKind::GuiFunction,
                path: script.to_string(),
                line: Some(call.line),
                detail: format!("{callee}() requires a display or dialog"),
            });
        }

        if callee.starts_with("rstudioapi::") || callee == "rstudioapi" {
            findings.push(PortabilityFinding {
                kind: FindingKind::InteractiveApi,
                path: script.to_string(),
                line: Some(call.line),
                detail: format!("{callee}() requires a live RStudio session"),
            });
        }
    }

    if let Some(manifest) = manifest {
        for entry in &manifest.files {
            if entry.size > OVERSIZE_LIMIT_BYTES {
                findings.push(PortabilityFinding {
                    kind: FindingKind::OversizedFile,
                    path: entry.path.clone(),
                    line: None,
                    detail: format!(
                        "{} is {} bytes, over the 100 MB hosting limit",
                        entry.path, entry.size
                    ),
                });
            }
        }
    }

    findings
}
