//! Project retrieval: download a project's file storage from the OSF REST
//! API (v2, paginated, with retry/backoff) or stage it from a local
//! directory, then verify that referenced scripts are present.
//!
//! Cache layout: `cache/<project_id>/<original tree>` with `manifest.json`
//! written beside the tree.

use crate::util::{sanitize_relative_path, sha256_hex, Semaphore};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectSource {
    Remote,
    Local,
}

/// Identifies one project to audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRef {
    /// 5-character OSF GUID for remote projects; a directory-derived slug
    /// for local ones.
    pub project_id: String,
    pub source: ProjectSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_root: Option<PathBuf>,
}

impl ProjectRef {
    pub fn remote(id: &str) -> Result<Self, IngestError> {
        let ok = id.len() == 5
            && id
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit());
        if !ok {
            return Err(IngestError::InvalidRef(id.to_string()));
        }
        Ok(Self {
            project_id: id.to_string(),
            source: ProjectSource::Remote,
            local_root: None,
        })
    }

    pub fn local(root: &Path) -> Result<Self, IngestError> {
        if !root.is_dir() {
            return Err(IngestError::InvalidRef(root.display().to_string()));
        }
        let id = root
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "local".to_string());
        Ok(Self {
            project_id: id,
            source: ProjectSource::Local,
            local_root: Some(root.to_path_buf()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Normalized relative path: forward slashes, no `..`, no leading `/`.
    pub path: String,
    pub size: u64,
    pub sha256: String,
}

/// A project's retrieved file tree plus script bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectManifest {
    #[serde(rename = "ref")]
    pub project_ref: ProjectRef,
    pub files: Vec<FileEntry>,
    /// Relative paths ending in `.R` / `.r`, lexicographic.
    pub r_scripts: Vec<String>,
    /// Referenced script paths not found during verification.
    pub missing_refs: Vec<String>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid project reference: {0}")]
    InvalidRef(String),
    #[error("project not found: {0}")]
    ProjectNotFound(String),
    #[error("rate limited after {attempts} attempts: {url}")]
    RateLimited { url: String, attempts: u32 },
    #[error("transfer failed: {0}")]
    TransferError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed listing: {0}")]
    MalformedListing(String),
}

/// Client for the OSF v2 API. The base URL is configurable so tests can
/// point at a local server; per-host request concurrency is bounded by a
/// semaphore shared across all fetch workers.
pub struct OsfClient {
    http: reqwest::blocking::Client,
    base_url: String,
    permits: Arc<Semaphore>,
    max_attempts: u32,
    backoff_start: Duration,
}

impl OsfClient {
    pub fn new(base_url: &str, host_concurrency: usize) -> Result<Self, IngestError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .user_agent(concat!("repro-audit/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| IngestError::TransferError(e.to_string()))?;
        Ok(Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            permits: Arc::new(Semaphore::new(host_concurrency)),
            max_attempts: 3,
            backoff_start: Duration::from_secs(1),
        })
    }

    pub fn default_api() -> Result<Self, IngestError> {
        Self::new("https://api.osf.io", 4)
    }

    /// GET with bounded retries: exponential backoff from 1s, honoring
    /// `Retry-After` on 429. 404/410 map to `ProjectNotFound`.
    fn get_with_retry(&self, url: &str) -> Result<reqwest::blocking::Response, IngestError> {
        let mut delay = self.backoff_start;
        let mut last_err = None;
        for attempt in 1..=self.max_attempts {
            let _permit = self.permits.acquire();
            match self.http.get(url).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return Ok(resp);
                    }
                    if status.as_u16() == 404 || status.as_u16() == 410 {
                        return Err(IngestError::ProjectNotFound(url.to_string()));
                    }
                    if status.as_u16() == 429 {
                        let wait = resp
                            .headers()
                            .get("Retry-After")
                            .and_then(|v| v.to_str().ok())
                            .and_then(|s| s.parse::<u64>().ok())
                            .map(Duration::from_secs)
                            .unwrap_or(delay)
                            .max(delay);
                        if attempt == self.max_attempts {
                            return Err(IngestError::RateLimited {
                                url: url.to_string(),
                                attempts: attempt,
                            });
                        }
                        std::thread::sleep(wait);
                        delay *= 2;
                        continue;
                    }
                    last_err = Some(format!("HTTP {status} for {url}"));
                }
                Err(e) => last_err = Some(e.to_string()),
            }
            if attempt < self.max_attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(IngestError::TransferError(
            last_err.unwrap_or_else(|| format!("request failed: {url}")),
        ))
    }
}

#[derive(Debug, Deserialize)]
struct Listing {
    data: Vec<Entity>,
    #[serde(default)]
    links: ListingLinks,
}

#[derive(Debug, Default, Deserialize)]
struct ListingLinks {
    #[serde(default)]
    next: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Entity {
    attributes: EntityAttributes,
    #[serde(default)]
    links: EntityLinks,
    #[serde(default)]
    relationships: Option<Relationships>,
}

#[derive(Debug, Deserialize)]
struct EntityAttributes {
    kind: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    materialized_path: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct EntityLinks {
    #[serde(default)]
    download: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Relationships {
    #[serde(default)]
    files: Option<RelatedFiles>,
}

#[derive(Debug, Deserialize)]
struct RelatedFiles {
    links: RelatedLinks,
}

#[derive(Debug, Deserialize)]
struct RelatedLinks {
    related: RelatedHref,
}

#[derive(Debug, Deserialize)]
struct RelatedHref {
    href: String,
}

/// Retrieve a project into `dest` and build its manifest.
///
/// Remote fetches walk the node's top-level file storage recursively
/// (folders are traversed through their listing links, pages through
/// `links.next`). Every file is downloaded to a `.part` temporary and
/// renamed on completion, so a file that exists under its final name was
/// fully transferred; partial files from an interrupted run are never
/// trusted. Local sources are copied into `dest` so the cache layout is
/// uniform.
pub fn fetch_project(
    client: &OsfClient,
    project_ref: &ProjectRef,
    dest: &Path,
) -> Result<ProjectManifest, IngestError> {
    fs::create_dir_all(dest)?;
    let mut files = match project_ref.source {
        ProjectSource::Local => {
            let root = project_ref
                .local_root
                .as_ref()
                .ok_or_else(|| IngestError::InvalidRef("local ref without root".into()))?;
            copy_local_tree(root, dest)?
        }
        ProjectSource::Remote => fetch_remote_tree(client, &project_ref.project_id, dest)?,
    };
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = build_manifest(project_ref.clone(), files);
    save_manifest(&manifest, dest)?;
    Ok(manifest)
}

fn build_manifest(project_ref: ProjectRef, files: Vec<FileEntry>) -> ProjectManifest {
    let r_scripts = files
        .iter()
        .filter(|f| f.path.ends_with(".R") || f.path.ends_with(".r"))
        .map(|f| f.path.clone())
        .collect();
    ProjectManifest {
        project_ref,
        files,
        r_scripts,
        missing_refs: Vec::new(),
    }
}

fn fetch_remote_tree(
    client: &OsfClient,
    project_id: &str,
    dest: &Path,
) -> Result<Vec<FileEntry>, IngestError> {
    let root = format!(
        "{}/v2/nodes/{}/files/osfstorage/",
        client.base_url, project_id
    );
    let mut queue = vec![root];
    let mut files = Vec::new();
    let mut seen = BTreeSet::new();

    while let Some(url) = queue.pop() {
        if !seen.insert(url.clone()) {
            continue;
        }
        let listing: Listing = client
            .get_with_retry(&url)?
            .json()
            .map_err(|e| IngestError::MalformedListing(e.to_string()))?;
        for entity in listing.data {
            match entity.attributes.kind.as_str() {
                "folder" => {
                    if let Some(rel) = entity
                        .relationships
                        .and_then(|r| r.files)
                        .map(|f| f.links.related.href)
                    {
                        queue.push(rel);
                    }
                }
                "file" => {
                    let raw_path = entity
                        .attributes
                        .materialized_path
                        .clone()
                        .unwrap_or_else(|| entity.attributes.name.clone());
                    let rel = sanitize_relative_path(&raw_path);
                    if rel.is_empty() {
                        continue;
                    }
                    let download = entity.links.download.ok_or_else(|| {
                        IngestError::MalformedListing(format!("file {rel} has no download link"))
                    })?;
                    let entry = download_file(client, &download, dest, &rel)?;
                    files.push(entry);
                }
                other => {
                    log::debug!("ignoring entity kind {other} in {url}");
                }
            }
        }
        if let Some(next) = listing.links.next {
            queue.push(next);
        }
    }
    Ok(files)
}

fn download_file(
    client: &OsfClient,
    url: &str,
    dest: &Path,
    rel: &str,
) -> Result<FileEntry, IngestError> {
    let target = dest.join(rel);
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = target.with_extension(format!(
        "{}part",
        target
            .extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    let mut resp = client.get_with_retry(url)?;
    let mut buf = Vec::new();
    resp.read_to_end(&mut buf)
        .map_err(|e| IngestError::TransferError(e.to_string()))?;
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, &target)?;
    Ok(FileEntry {
        path: rel.to_string(),
        size: buf.len() as u64,
        sha256: sha256_hex(&buf),
    })
}

fn copy_local_tree(root: &Path, dest: &Path) -> Result<Vec<FileEntry>, IngestError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| IngestError::TransferError(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel_os = entry
            .path()
            .strip_prefix(root)
            .map_err(|e| IngestError::TransferError(e.to_string()))?;
        let rel = sanitize_relative_path(&rel_os.to_string_lossy());
        if rel.is_empty() || rel == MANIFEST_FILE {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        let target = dest.join(&rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        if target != entry.path() {
            fs::write(&target, &bytes)?;
        }
        files.push(FileEntry {
            path: rel,
            size: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(files)
}

/// Walk an already-materialized cache directory and rebuild a manifest
/// without copying (used to validate cache reuse).
pub fn load_cached_manifest(dir: &Path) -> Result<Option<ProjectManifest>, IngestError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let manifest: ProjectManifest = serde_json::from_str(&text)
        .map_err(|e| IngestError::MalformedListing(format!("{}: {e}", path.display())))?;
    Ok(Some(manifest))
}

/// True when every manifest file still exists under `dir` with a matching
/// content hash.
pub fn cache_is_valid(manifest: &ProjectManifest, dir: &Path) -> bool {
    manifest.files.iter().all(|f| {
        let p = dir.join(&f.path);
        match fs::read(&p) {
            Ok(bytes) => sha256_hex(&bytes) == f.sha256,
            Err(_) => false,
        }
    })
}

pub fn save_manifest(manifest: &ProjectManifest, dir: &Path) -> Result<(), IngestError> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| IngestError::TransferError(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

/// Pure set difference: `missing_refs = expected \ manifest paths`,
/// case-sensitive exact match. Absence is data, not an error.
pub fn verify_referenced_scripts(
    manifest: &ProjectManifest,
    expected: &[String],
) -> ProjectManifest {
    let present: BTreeSet<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    let mut out = manifest.clone();
    out.missing_refs = expected
        .iter()
        .filter(|e| !present.contains(e.as_str()))
        .cloned()
        .collect();
    out
}
