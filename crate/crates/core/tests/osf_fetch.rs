//! Integration tests for remote project retrieval against a local server
//! speaking the OSF v2 listing shape: pagination, folder traversal, retry
//! on 429, not-found mapping, hostile-path containment and idempotence.

use repro_audit_core::ingest::{fetch_project, IngestError, OsfClient, ProjectRef};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

type Responder = Box<dyn Fn(&str, usize) -> (u16, Vec<(String, String)>, Vec<u8>) + Send + Sync>;

/// Minimal single-purpose HTTP server: routes exact paths to canned
/// responses, counting hits per path.
struct MockServer {
    addr: String,
    hits: Arc<Mutex<HashMap<String, usize>>>,
    shutdown: Arc<AtomicUsize>,
}

impl MockServer {
    fn start(responder: Responder) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let hits: Arc<Mutex<HashMap<String, usize>>> = Arc::new(Mutex::new(HashMap::new()));
        let shutdown = Arc::new(AtomicUsize::new(0));
        let hits_bg = hits.clone();
        let shutdown_bg = shutdown.clone();
        listener.set_nonblocking(true).unwrap();
        std::thread::spawn(move || {
            while shutdown_bg.load(Ordering::SeqCst) == 0 {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let hits = hits_bg.clone();
                        handle(stream, &responder, &hits);
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Self {
            addr,
            hits,
            shutdown,
        }
    }

    fn hits_for(&self, path: &str) -> usize {
        *self.hits.lock().unwrap().get(path).unwrap_or(&0)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(1, Ordering::SeqCst);
    }
}

fn handle(mut stream: TcpStream, responder: &Responder, hits: &Mutex<HashMap<String, usize>>) {
    stream
        .set_read_timeout(Some(std::time::Duration::from_secs(2)))
        .ok();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();
    // Drain headers.
    let mut line = String::new();
    while reader.read_line(&mut line).is_ok() {
        if line == "\r\n" || line == "\n" || line.is_empty() {
            break;
        }
        line.clear();
    }
    let count = {
        let mut map = hits.lock().unwrap();
        let entry = map.entry(path.clone()).or_insert(0);
        *entry += 1;
        *entry
    };
    let (status, headers, body) = responder(&path, count);
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        410 => "Gone",
        429 => "Too Many Requests",
        _ => "Error",
    };
    let mut response = format!("HTTP/1.1 {status} {reason}\r\n");
    for (k, v) in &headers {
        response.push_str(&format!("{k}: {v}\r\n"));
    }
    response.push_str(&format!(
        "Content-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    ));
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.write_all(&body);
    let _ = stream.flush();
}

fn json_response(body: String) -> (u16, Vec<(String, String)>, Vec<u8>) {
    (
        200,
        vec![("Content-Type".into(), "application/json".into())],
        body.into_bytes(),
    )
}

fn file_entity(addr: &str, name: &str, materialized: &str) -> String {
    format!(
        r#"{{"attributes":{{"kind":"file","name":"{name}","materialized_path":"{materialized}"}},"links":{{"download":"{addr}/dl/{name}"}}}}"#
    )
}

fn folder_entity(addr: &str, name: &str, listing: &str) -> String {
    format!(
        r#"{{"attributes":{{"kind":"folder","name":"{name}"}},"relationships":{{"files":{{"links":{{"related":{{"href":"{addr}{listing}"}}}}}}}}}}"#
    )
}

/// Standard happy-path project: two pages at the top level plus a folder.
fn project_server() -> MockServer {
    let addr_cell: Arc<Mutex<String>> = Arc::new(Mutex::new(String::new()));
    let addr_for_responder = addr_cell.clone();
    let server = MockServer::start(Box::new(move |path, _count| {
        let addr = addr_for_responder.lock().unwrap().clone();
        match path {
            "/v2/nodes/abcde/files/osfstorage/" => json_response(format!(
                r#"{{"data":[{},{},{}],"links":{{"next":"{addr}/v2/nodes/abcde/files/osfstorage/page2"}}}}"#,
                file_entity(&addr, "analysis.R", "/analysis.R"),
                file_entity(&addr, "data.csv", "/data/data.csv"),
                folder_entity(&addr, "scripts", "/v2/nodes/abcde/folders/scripts/"),
            )),
            "/v2/nodes/abcde/files/osfstorage/page2" => json_response(format!(
                r#"{{"data":[{}],"links":{{"next":null}}}}"#,
                file_entity(&addr, "notes.txt", "/notes.txt"),
            )),
            "/v2/nodes/abcde/folders/scripts/" => json_response(format!(
                r#"{{"data":[{}],"links":{{"next":null}}}}"#,
                file_entity(&addr, "model.r", "/scripts/model.r"),
            )),
            "/dl/analysis.R" => (200, vec![], b"library(dplyr)\n".to_vec()),
            "/dl/data.csv" => (200, vec![], b"a,b\n1,2\n".to_vec()),
            "/dl/notes.txt" => (200, vec![], b"notes\n".to_vec()),
            "/dl/model.r" => (200, vec![], b"lm(y ~ x)\n".to_vec()),
            _ => (404, vec![], b"{}".to_vec()),
        }
    }));
    *addr_cell.lock().unwrap() = server.addr.clone();
    server
}

#[test]
fn fetch_walks_pages_and_folders() {
    let server = project_server();
    let client = OsfClient::new(&server.addr, 4).unwrap();
    let dest = tempfile::tempdir().unwrap();
    let project = ProjectRef::remote("abcde").unwrap();
    let manifest = fetch_project(&client, &project, dest.path()).unwrap();

    let paths: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(
        paths,
        vec!["analysis.R", "data/data.csv", "notes.txt", "scripts/model.r"]
    );
    assert_eq!(manifest.r_scripts, vec!["analysis.R", "scripts/model.r"]);
    assert!(dest.path().join("data/data.csv").is_file());
    assert!(dest.path().join("manifest.json").is_file());
    let on_disk = std::fs::read(dest.path().join("analysis.R")).unwrap();
    assert_eq!(on_disk, b"library(dplyr)\n");
}

#[test]
fn fetch_is_idempotent() {
    let server = project_server();
    let client = OsfClient::new(&server.addr, 4).unwrap();
    let dest_a = tempfile::tempdir().unwrap();
    let dest_b = tempfile::tempdir().unwrap();
    let project = ProjectRef::remote("abcde").unwrap();
    let first = fetch_project(&client, &project, dest_a.path()).unwrap();
    let second = fetch_project(&client, &project, dest_b.path()).unwrap();
    let hashes = |m: &repro_audit_core::ingest::ProjectManifest| {
        m.files
            .iter()
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(hashes(&first), hashes(&second));
}

#[test]
fn deleted_project_maps_to_not_found() {
    let server = MockServer::start(Box::new(|_path, _count| (410, vec![], b"{}".to_vec())));
    let client = OsfClient::new(&server.addr, 4).unwrap();
    let dest = tempfile::tempdir().unwrap();
    let project = ProjectRef::remote("gone1").unwrap();
    let err = fetch_project(&client, &project, dest.path()).unwrap_err();
    assert!(matches!(err, IngestError::ProjectNotFound(_)));
}

#[test]
fn rate_limit_retries_with_backoff() {
    let addr_cell: Arc<Mutex<String>> = Arc::new(Mutex::new(String::new()));
    let addr_for_responder = addr_cell.clone();
    let server = MockServer::start(Box::new(move |path, count| {
        let addr = addr_for_responder.lock().unwrap().clone();
        match path {
            "/v2/nodes/rlim1/files/osfstorage/" => {
                if count < 3 {
                    (
                        429,
                        vec![("Retry-After".into(), "0".into())],
                        b"{}".to_vec(),
                    )
                } else {
                    json_response(format!(
                        r#"{{"data":[{}],"links":{{"next":null}}}}"#,
                        file_entity(&addr, "a.R", "/a.R"),
                    ))
                }
            }
            "/dl/a.R" => (200, vec![], b"1\n".to_vec()),
            _ => (404, vec![], b"{}".to_vec()),
        }
    }));
    *addr_cell.lock().unwrap() = server.addr.clone();

    let client = OsfClient::new(&server.addr, 4).unwrap();
    let dest = tempfile::tempdir().unwrap();
    let project = ProjectRef::remote("rlim1").unwrap();
    let manifest = fetch_project(&client, &project, dest.path()).unwrap();
    assert_eq!(manifest.files.len(), 1);
    assert_eq!(server.hits_for("/v2/nodes/rlim1/files/osfstorage/"), 3);
}

#[test]
fn hostile_listing_paths_stay_under_dest() {
    let addr_cell: Arc<Mutex<String>> = Arc::new(Mutex::new(String::new()));
    let addr_for_responder = addr_cell.clone();
    let server = MockServer::start(Box::new(move |path, _count| {
        let addr = addr_for_responder.lock().unwrap().clone();
        match path {
            "/v2/nodes/evil1/files/osfstorage/" => json_response(format!(
                r#"{{"data":[{},{},{}],"links":{{"next":null}}}}"#,
                file_entity(&addr, "up.R", "/../../escape/up.R"),
                file_entity(&addr, "abs.R", "//etc/abs.R"),
                file_entity(&addr, "dot.R", "/./a/../dot.R"),
            )),
            p if p.starts_with("/dl/") => (200, vec![], b"x <- 1\n".to_vec()),
            _ => (404, vec![], b"{}".to_vec()),
        }
    }));
    *addr_cell.lock().unwrap() = server.addr.clone();

    let client = OsfClient::new(&server.addr, 4).unwrap();
    let dest = tempfile::tempdir().unwrap();
    let project = ProjectRef::remote("evil1").unwrap();
    let manifest = fetch_project(&client, &project, dest.path()).unwrap();
    assert_eq!(manifest.files.len(), 3);

    let dest_canonical = dest.path().canonicalize().unwrap();
    for file in &manifest.files {
        assert!(!file.path.contains(".."), "{}", file.path);
        assert!(!file.path.starts_with('/'), "{}", file.path);
        let on_disk = dest.path().join(&file.path);
        let canonical = on_disk.canonicalize().unwrap();
        assert!(
            canonical.starts_with(&dest_canonical),
            "{} escaped to {}",
            file.path,
            canonical.display()
        );
    }
    // Nothing materialized outside the tempdir.
    assert!(!dest.path().parent().unwrap().join("escape").exists());
}
