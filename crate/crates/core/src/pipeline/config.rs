//! Pipeline configuration: a plain-text key-value config file with flag
//! overrides (flags win), validated into a [`PipelineConfig`].

use crate::envspec::{DEFAULT_CRAN_SNAPSHOT, DEFAULT_RUNTIME_PIN};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub timeout_s: u64,
    pub mem_mb: u64,
    pub parallel_projects: usize,
    pub parallel_containers: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            timeout_s: 1800,
            mem_mb: 4096,
            parallel_projects: 4,
            parallel_containers: default_container_parallelism(),
        }
    }
}

fn default_container_parallelism() -> usize {
    (std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(2)
        / 2)
    .max(1)
}

/// One project to audit: a remote OSF GUID or a local directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectEntry {
    pub source: String,
    /// Script paths the project is expected to contain (verification input).
    pub expected_scripts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub projects: Vec<ProjectEntry>,
    pub cache_dir: PathBuf,
    pub staging_dir: PathBuf,
    pub output_dir: PathBuf,
    pub limits: Limits,
    pub runtime_pin: String,
    pub cran_snapshot_url: String,
    pub pattern_table_path: Option<PathBuf>,
    /// No remote fetching; container network stays off regardless.
    pub offline: bool,
    /// Forces the synthetic executor and synthetic builds.
    pub dry_run: bool,
    /// Scripted outcomes for dry runs: project id → script → outcome.
    pub dry_run_outcomes: Option<PathBuf>,
    /// Per-host request concurrency bound for the OSF API.
    pub fetch_concurrency: usize,
    pub api_base_url: String,
    /// Builder command template; `{tag}` and `{dir}` are substituted.
    pub builder_command: Option<Vec<String>>,
    /// Allow network inside script containers (off by default).
    pub container_network: bool,
    /// Dump tokens and calls per script as line-delimited JSON.
    pub dump_analysis: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            projects: Vec::new(),
            cache_dir: PathBuf::from("cache"),
            staging_dir: PathBuf::from("staging"),
            output_dir: PathBuf::from("out"),
            limits: Limits::default(),
            runtime_pin: DEFAULT_RUNTIME_PIN.to_string(),
            cran_snapshot_url: DEFAULT_CRAN_SNAPSHOT.to_string(),
            pattern_table_path: None,
            offline: false,
            dry_run: false,
            dry_run_outcomes: None,
            fetch_concurrency: 4,
            api_base_url: "https://api.osf.io".to_string(),
            builder_command: None,
            container_network: false,
            dump_analysis: false,
        }
    }
}

impl PipelineConfig {
    /// Check the config invariants: positive limits, pairwise-distinct
    /// directories.
    pub fn validate(&self) -> Result<(), String> {
        if self.limits.timeout_s == 0
            || self.limits.mem_mb == 0
            || self.limits.parallel_projects == 0
            || self.limits.parallel_containers == 0
            || self.fetch_concurrency == 0
        {
            return Err("all limit values must be > 0".to_string());
        }
        let dirs = [&self.cache_dir, &self.staging_dir, &self.output_dir];
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                if dirs[i] == dirs[j] {
                    return Err(format!(
                        "cache, staging and output directories must be distinct ({} repeats)",
                        dirs[i].display()
                    ));
                }
            }
        }
        Ok(())
    }

    /// Merge `key = value` lines from a config file under this config.
    /// Unknown keys are an error so typos do not pass silently.
    pub fn apply_config_file(&mut self, text: &str) -> Result<(), String> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", idx + 1))?;
            let key = key.trim();
            let value = value.trim();
            self.apply_key(key, value)
                .map_err(|e| format!("line {}: {e}", idx + 1))?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value for {key}: {value:?}"))
        }
        match key {
            "projects" => {
                for entry in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    self.projects.push(parse_project_entry(entry));
                }
            }
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "staging_dir" => self.staging_dir = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "timeout_s" => self.limits.timeout_s = parse(key, value)?,
            "mem_mb" => self.limits.mem_mb = parse(key, value)?,
            "parallel_projects" => self.limits.parallel_projects = parse(key, value)?,
            "parallel_containers" => self.limits.parallel_containers = parse(key, value)?,
            "runtime_pin" => self.runtime_pin = value.to_string(),
            "cran_snapshot_url" => self.cran_snapshot_url = value.to_string(),
            "pattern_table" => self.pattern_table_path = Some(PathBuf::from(value)),
            "offline" => self.offline = parse(key, value)?,
            "dry_run" => self.dry_run = parse(key, value)?,
            "dry_run_outcomes" => self.dry_run_outcomes = Some(PathBuf::from(value)),
            "fetch_concurrency" => self.fetch_concurrency = parse(key, value)?,
            "api_base_url" => self.api_base_url = value.to_string(),
            "builder_command" => {
                self.builder_command =
                    Some(value.split_whitespace().map(str::to_string).collect());
            }
            "container_network" => self.container_network = parse(key, value)?,
            "dump_analysis" => self.dump_analysis = parse(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }
}

/// Parse one project entry: `source` optionally followed by
/// `|expected1;expected2;...` (semicolons, so entries can sit in
/// comma-separated lists).
pub fn parse_project_entry(entry: &str) -> ProjectEntry {
    match entry.split_once('|') {
        Some((source, expected)) => ProjectEntry {
            source: source.trim().to_string(),
            expected_scripts: expected
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        },
        None => ProjectEntry {
            source: entry.trim().to_string(),
            expected_scripts: Vec::new(),
        },
    }
}

/// Parse a projects file: one entry per line, `#` comments.
pub fn parse_projects_file(text: &str) -> Vec<ProjectEntry> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_project_entry)
        .collect()
}

/// Expected-script map keyed by resolved project id.
pub fn expected_by_source(entries: &[ProjectEntry]) -> BTreeMap<String, Vec<String>> {
    entries
        .iter()
        .filter(|e| !e.expected_scripts.is_empty())
        .map(|e| (e.source.clone(), e.expected_scripts.clone()))
        .collect()
}

/// A source names a remote project when it is a well-formed 5-character OSF
/// GUID and no directory of that name exists; otherwise it is a local path.
pub fn source_is_remote(source: &str) -> bool {
    source.len() == 5
        && source
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        && !Path::new(source).is_dir()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_config_file(
            "# comment\nprojects = abcde, fixtures/p1|a.R;b.R\ntimeout_s = 60\noffline = true\n",
        )
        .unwrap();
        assert_eq!(cfg.projects.len(), 2);
        assert_eq!(cfg.projects[0].source, "abcde");
        assert_eq!(cfg.projects[1].expected_scripts, vec!["a.R", "b.R"]);
        assert_eq!(cfg.limits.timeout_s, 60);
        assert!(cfg.offline);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply_config_file("tmeout = 3\n").is_err());
    }

    #[test]
    fn validation_rules() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.limits.timeout_s = 0;
        assert!(cfg.validate().is_err());
        cfg.limits.timeout_s = 1;
        cfg.staging_dir = cfg.cache_dir.clone();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn remote_detection() {
        assert!(source_is_remote("abc12"));
        assert!(!source_is_remote("abc1"));
        assert!(!source_is_remote("ABCDE"));
        assert!(!source_is_remote("fixtures/p1"));
    }

    #[test]
    fn projects_file_parsing() {
        let entries = parse_projects_file("# corpus\nabcde\nfixtures/p2|main.R;sub/fig.R\n\n");
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].source, "fixtures/p2");
        assert_eq!(entries[1].expected_scripts, vec!["main.R", "sub/fig.R"]);
    }
}
