//! Two-level failure classification: regular-expression patterns map raw
//! logs to initial error types (level 1); each initial type belongs to one
//! broad category (level 2).
//!
//! The pattern table is data, not code — a TSV with one record per line —
//! so the built-in table can be replaced or extended without rebuilding.

use crate::exec::{ExecStatus, ExecutionRecord};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Built-in pattern table source; loaded through the same parser as user
/// tables.
pub const BUILTIN_PATTERN_TABLE: &str = include_str!("patterns.tsv");

/// Broad failure categories (level 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    MissingObjectOrFunction,
    InvalidFileOrDirectoryPath,
    MissingPackage,
    PackageInstallationFailure,
    SharedLibraryLoadError,
    FileReadError,
    OtherErrors,
    Unclassified,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 8] = [
        ErrorCategory::MissingObjectOrFunction,
        ErrorCategory::InvalidFileOrDirectoryPath,
        ErrorCategory::MissingPackage,
        ErrorCategory::PackageInstallationFailure,
        ErrorCategory::SharedLibraryLoadError,
        ErrorCategory::FileReadError,
        ErrorCategory::OtherErrors,
        ErrorCategory::Unclassified,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCategory::MissingObjectOrFunction => "MissingObjectOrFunction",
            ErrorCategory::InvalidFileOrDirectoryPath => "InvalidFileOrDirectoryPath",
            ErrorCategory::MissingPackage => "MissingPackage",
            ErrorCategory::PackageInstallationFailure => "PackageInstallationFailure",
            ErrorCategory::SharedLibraryLoadError => "SharedLibraryLoadError",
            ErrorCategory::FileReadError => "FileReadError",
            ErrorCategory::OtherErrors => "OtherErrors",
            ErrorCategory::Unclassified => "Unclassified",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s)
    }
}

/// One level-1 pattern row.
#[derive(Debug, Clone)]
pub struct ErrorPattern {
    pub id: String,
    pub priority: i32,
    pub initial_type: String,
    pub category: ErrorCategory,
    pub regex: Regex,
    pub source: String,
}

/// The classification assigned to one failed script's log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorClassification {
    pub script: String,
    pub initial_type: String,
    pub category: ErrorCategory,
    /// Verbatim substring of the log; empty only for Unclassified.
    pub matched_excerpt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern_id: Option<String>,
}

#[derive(Debug, Error)]
pub enum PatternTableError {
    #[error("line {line}: expected 5 tab-separated fields")]
    BadRecord { line: usize },
    #[error("line {line}: duplicate pattern id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown category {category}")]
    UnknownCategory { line: usize, category: String },
    #[error("line {line}: category Unclassified is reserved for the no-match outcome")]
    ReservedCategory { line: usize },
    #[error("line {line}: bad priority {value}")]
    BadPriority { line: usize, value: String },
    #[error("pattern {id} failed to compile: {source}")]
    PatternCompileError {
        id: String,
        #[source]
        source: regex::Error,
    },
    #[error("initial type {initial_type} maps to both {first} and {second}")]
    InconsistentTypeMapping {
        initial_type: String,
        first: String,
        second: String,
    },
}

/// Parse and compile a pattern table. Records are
/// `id<TAB>priority<TAB>initial_type<TAB>category<TAB>regex`; `#` lines are
/// comments. The level-1 → level-2 mapping must be functional: one initial
/// type, one category.
pub fn load_pattern_table(source: &str) -> Result<Vec<ErrorPattern>, PatternTableError> {
    let mut patterns: Vec<ErrorPattern> = Vec::new();
    let mut type_category: BTreeMap<String, ErrorCategory> = BTreeMap::new();

    for (idx, raw_line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(PatternTableError::BadRecord { line: line_no });
        }
        let (id, priority_s, initial_type, category_s, regex_src) =
            (fields[0], fields[1], fields[2], fields[3], fields[4]);
        if patterns.iter().any(|p| p.id == id) {
            return Err(PatternTableError::DuplicateId {
                line: line_no,
                id: id.to_string(),
            });
        }
        let priority: i32 = priority_s
            .parse()
            .map_err(|_| PatternTableError::BadPriority {
                line: line_no,
                value: priority_s.to_string(),
            })?;
        let category = ErrorCategory::parse(category_s).ok_or_else(|| {
            PatternTableError::UnknownCategory {
                line: line_no,
                category: category_s.to_string(),
            }
        })?;
        if category == ErrorCategory::Unclassified {
            return Err(PatternTableError::ReservedCategory { line: line_no });
        }
        if let Some(existing) = type_category.get(initial_type) {
            if *existing != category {
                return Err(PatternTableError::InconsistentTypeMapping {
                    initial_type: initial_type.to_string(),
                    first: existing.as_str().to_string(),
                    second: category.as_str().to_string(),
                });
            }
        } else {
            type_category.insert(initial_type.to_string(), category);
        }
        let regex = Regex::new(regex_src).map_err(|source| {
            PatternTableError::PatternCompileError {
                id: id.to_string(),
                source,
            }
        })?;
        patterns.push(ErrorPattern {
            id: id.to_string(),
            priority,
            initial_type: initial_type.to_string(),
            category,
            regex,
            source: regex_src.to_string(),
        });
    }
    patterns.sort_by(|a, b| a.priority.cmp(&b.priority).then(a.id.cmp(&b.id)));
    Ok(patterns)
}

/// An immutable, compiled classifier. Shareable across threads after load.
pub struct Classifier {
    patterns: Vec<ErrorPattern>,
    table_source: String,
}

impl Classifier {
    pub fn from_table(source: &str) -> Result<Self, PatternTableError> {
        Ok(Self {
            patterns: load_pattern_table(source)?,
            table_source: source.to_string(),
        })
    }

    pub fn builtin() -> Self {
        Self::from_table(BUILTIN_PATTERN_TABLE).expect("built-in pattern table loads")
    }

    pub fn patterns(&self) -> &[ErrorPattern] {
        &self.patterns
    }

    /// SHA-256 of the table source; recorded in report metadata.
    pub fn table_hash(&self) -> String {
        crate::util::sha256_hex(self.table_source.as_bytes())
    }

    /// Classify one failure log. Total over arbitrary strings: the winning
    /// pattern is the one with the lowest priority, breaking ties by
    /// earliest match position then id (so row order never matters); no
    /// match yields Unclassified, never an error.
    pub fn classify_log(&self, log: &str) -> ErrorClassification {
        let mut best: Option<(i32, usize, &ErrorPattern, regex::Match)> = None;
        for pattern in &self.patterns {
            if let Some(m) = pattern.regex.find(log) {
                let key = (pattern.priority, m.start());
                let better = match &best {
                    None => true,
                    Some((bp, bs, bpat, _)) => {
                        key < (*bp, *bs) || (key == (*bp, *bs) && pattern.id < bpat.id)
                    }
                };
                if better {
                    best = Some((pattern.priority, m.start(), pattern, m));
                }
            }
        }
        match best {
            Some((_, _, pattern, m)) => ErrorClassification {
                script: String::new(),
                initial_type: pattern.initial_type.clone(),
                category: pattern.category,
                matched_excerpt: truncate_excerpt(m.as_str(), 400),
                pattern_id: Some(pattern.id.clone()),
            },
            None => ErrorClassification {
                script: String::new(),
                initial_type: "unclassified".to_string(),
                category: ErrorCategory::Unclassified,
                matched_excerpt: String::new(),
                pattern_id: None,
            },
        }
    }

    /// Classify every failed or timed-out record, preserving order.
    /// Successful and not-run records produce nothing.
    pub fn classify_batch(&self, records: &[ExecutionRecord]) -> Vec<ErrorClassification> {
        records
            .iter()
            .filter(|r| matches!(r.status, ExecStatus::Failed | ExecStatus::Timeout))
            .map(|r| {
                let mut c = self.classify_log(&r.log);
                c.script = r.script.clone();
                c
            })
            .collect()
    }
}

fn truncate_excerpt(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let mut end = max;
    while end > 0 && !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_string()
}
