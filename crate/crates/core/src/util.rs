//! Small shared utilities: hashing, rounding, path normalization and a
//! counting semaphore for bounding request concurrency.

use sha2::{Digest, Sha256};
use std::sync::{Condvar, Mutex};

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Round half-up to `dp` decimal places.
///
/// `f64::round` and `format!` both round ties to even in places; audit
/// percentages are specified as half-up (119/460 prints as 25.87).
pub fn round_half_up(value: f64, dp: u32) -> f64 {
    let factor = 10f64.powi(dp as i32);
    (value * factor + 0.5).floor() / factor
}

/// Normalize a slash-separated path from an untrusted listing into a safe
/// relative path: drops empty and `.` segments, rewrites `..` so the result
/// can never escape the extraction root.
pub fn sanitize_relative_path(raw: &str) -> String {
    let cleaned = raw.replace('\\', "/");
    let parts: Vec<String> = cleaned
        .split('/')
        .filter(|s| !s.is_empty() && *s != ".")
        .map(|s| {
            if s == ".." {
                "__dotdot__".to_string()
            } else {
                s.trim_end_matches(':').to_string()
            }
        })
        .filter(|s| !s.is_empty())
        .collect();
    parts.join("/")
}

/// A counting semaphore built on `Mutex` + `Condvar`; bounds per-host HTTP
/// concurrency during bulk fetches.
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SemaphoreGuard { sem: self }
    }
}

pub struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.permits.lock().unwrap();
        *n += 1;
        self.sem.cv.notify_one();
    }
}

/// Run `f` over `0..n` with at most `workers` threads, collecting results in
/// index order. Worker threads pull indices from a shared counter, so output
/// order is deterministic regardless of scheduling.
pub fn parallel_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if n == 0 {
        return Vec::new();
    }
    let workers = workers.clamp(1, n);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().unwrap() = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}
