//! Static origin serving prep output over the client's URL scheme, with a
//! request log and scripted fault injection.
//!
//! A server rooted at `root` maps `/video/{id}/<resource>` to
//! `root/{id}/<resource>` for exactly these resources: `playlist.m3u8`,
//! `storyboard.json`, `ltc/{n}.jpg` and `seg/{n}.ts`. Everything else is 404.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, error};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tiny_http::{Header, Method, Request, Response, Server};

pub const DEFAULT_WORKERS: usize = 8;

#[derive(Debug, Error)]
pub enum OriginError {
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error("root {0} is not a directory")]
    Root(PathBuf),
    #[error("fault plan {path}: {message}")]
    FaultPlan { path: PathBuf, message: String },
    #[error("request log {path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub path: String,
    pub status: u16,
    pub bytes_sent: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

/// Forced statuses per path pattern, consumed one per matching request.
///
/// Patterns match the request path; `*` matches any run of characters.
/// A forced 2xx serves the file normally. Once a sequence is used up the
/// path is served normally. When several patterns match, the first in
/// lexicographic order wins.
///
/// File form: `{"/video/*/seg/0.ts": [503, 200]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultPlan {
    rules: BTreeMap<String, Vec<u16>>,
}

impl FaultPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, pattern: &str, statuses: &[u16]) -> Self {
        self.rules.insert(pattern.to_string(), statuses.to_vec());
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, OriginError> {
        let err = |message: String| OriginError::FaultPlan {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let plan: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        for (pattern, statuses) in &plan.rules {
            if let Some(s) = statuses.iter().find(|s| !(100..=599).contains(*s)) {
                return Err(err(format!("{pattern}: status {s} out of range")));
            }
        }
        Ok(plan)
    }

    /// Pops the next forced status for `path`, if any.
    fn take(&mut self, path: &str) -> Option<u16> {
        let seq = self
            .rules
            .iter_mut()
            .find(|(pattern, seq)| !seq.is_empty() && glob_match(pattern, path))?
            .1;
        Some(seq.remove(0))
    }
}

fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for part in &parts[1..parts.len() - 1] {
        match rest.find(part) {
            Some(i) => rest = &rest[i + part.len()..],
            None => return false,
        }
    }
    true
}

#[derive(Debug, Default)]
pub struct ServeOptions {
    pub fault_plan: Option<FaultPlan>,
    /// Append each log entry to this file as a JSON line.
    pub log_file: Option<PathBuf>,
    pub workers: Option<usize>,
}

struct Shared {
    root: PathBuf,
    log: Mutex<Vec<RequestLogEntry>>,
    faults: Mutex<FaultPlan>,
    sink: Option<Mutex<File>>,
}

/// A running origin. Dropping it stops the server.
pub struct OriginServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    stopping: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl std::fmt::Debug for OriginServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OriginServer")
            .field("addr", &self.addr)
            .field("root", &self.shared.root)
            .finish_non_exhaustive()
    }
}

/// Starts serving `root` on `bind_addr` (`127.0.0.1:0` picks a free port).
pub fn serve(root: &Path, bind_addr: &str, options: ServeOptions) -> Result<OriginServer, OriginError> {
    if !root.is_dir() {
        return Err(OriginError::Root(root.to_path_buf()));
    }
    let sink = match &options.log_file {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| OriginError::Log {
                    path: path.clone(),
                    source,
                })?,
        )),
        None => None,
    };
    let server = Server::http(bind_addr).map_err(|e| OriginError::Bind {
        addr: bind_addr.to_string(),
        message: e.to_string(),
    })?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| OriginError::Bind {
            addr: bind_addr.to_string(),
            message: "not an IP listener".into(),
        })?;
    let server = Arc::new(server);
    let shared = Arc::new(Shared {
        root: root.to_path_buf(),
        log: Mutex::new(Vec::new()),
        faults: Mutex::new(options.fault_plan.unwrap_or_default()),
        sink,
    });
    let stopping = Arc::new(AtomicBool::new(false));
    let workers = (0..options.workers.unwrap_or(DEFAULT_WORKERS).max(1))
        .map(|_| {
            let (server, shared, stopping) = (server.clone(), shared.clone(), stopping.clone());
            std::thread::spawn(move || loop {
                match server.recv() {
                    Ok(request) => handle(&shared, request),
                    Err(_) if stopping.load(Ordering::SeqCst) => break,
                    Err(e) => debug!("accept: {e}"),
                }
            })
        })
        .collect();
    debug!("origin serving {} on {addr}", root.display());
    Ok(OriginServer {
        server,
        shared,
        stopping,
        workers,
        addr,
    })
}

impl OriginServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Copy of the request log, in arrival order.
    pub fn snapshot_log(&self) -> Vec<RequestLogEntry> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.shared.log.lock().unwrap().clear();
    }

    pub fn write_log_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for entry in self.snapshot_log() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Blocks until the server is stopped from another thread or the process exits.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for OriginServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Resolves a request path to a file under `root`, or `None` if the path is
/// not part of the URL scheme.
pub fn resolve(root: &Path, path: &str) -> Option<PathBuf> {
    let rest = path.strip_prefix("/video/")?;
    let (id, resource) = rest.split_once('/')?;
    let id_ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.');
    if !id_ok {
        return None;
    }
    let numbered = |prefix: &str, ext: &str| {
        resource
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(ext))
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
    };
    let known = resource == "playlist.m3u8"
        || resource == "storyboard.json"
        || numbered("ltc/", ".jpg")
        || numbered("seg/", ".ts");
    known.then(|| root.join(id).join(resource))
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit('.').next() {
        Some("m3u8") => "application/vnd.apple.mpegurl",
        Some("json") => "application/json",
        Some("jpg") => "image/jpeg",
        Some("ts") => "video/mp2t",
        _ => "application/octet-stream",
    }
}

fn handle(shared: &Shared, request: Request) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let (status, body) = respond(shared, request.method(), &path);
    let entry = RequestLogEntry {
        path: path.clone(),
        status,
        bytes_sent: body.len() as u64,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
    };
    // logged before responding so a client that has its bytes always sees the entry
    if let Some(sink) = &shared.sink {
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        if let Err(e) = writeln!(sink.lock().unwrap(), "{line}") {
            error!("request log: {e}");
        }
    }
    shared.log.lock().unwrap().push(entry);

    let mut response = Response::from_data(body).with_status_code(status);
    if status == 200 {
        let ct = Header::from_bytes("Content-Type", content_type(&path)).expect("static header");
        response = response.with_header(ct);
    }
    if let Err(e) = request.respond(response) {
        debug!("{path}: client went away: {e}");
    }
}

fn respond(shared: &Shared, method: &Method, path: &str) -> (u16, Vec<u8>) {
    if *method != Method::Get {
        return (405, b"method not allowed\n".to_vec());
    }
    if let Some(forced) = shared.faults.lock().unwrap().take(path) {
        if !(200..300).contains(&forced) {
            return (forced, format!("injected {forced}\n").into_bytes());
        }
    }
    let Some(file) = resolve(&shared.root, path) else {
        return (404, b"not found\n".to_vec());
    };
    match fs::read(&file) {
        Ok(bytes) => (200, bytes),
        Err(e) if e.kind() == io::ErrorKind::NotFound => (404, b"not found\n".to_vec()),
        Err(e) => {
            error!("{}: {e}", file.display());
            (500, b"internal error\n".to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes() {
        let root = Path::new("/srv");
        assert_eq!(resolve(root, "/video/demo/playlist.m3u8").unwrap(), Path::new("/srv/demo/playlist.m3u8"));
        assert_eq!(resolve(root, "/video/demo/ltc/12.jpg").unwrap(), Path::new("/srv/demo/ltc/12.jpg"));
        assert_eq!(resolve(root, "/video/demo/seg/0.ts").unwrap(), Path::new("/srv/demo/seg/0.ts"));
        for bad in [
            "/video/../etc/passwd",
            "/video/demo/../../x",
            "/video/demo/seg/../0.ts",
            "/video/demo/seg/x.ts",
            "/video/demo/seg/.ts",
            "/video//playlist.m3u8",
            "/video/a%2Fb/playlist.m3u8",
            "/other/demo/playlist.m3u8",
            "/video/demo/notes.txt",
        ] {
            assert_eq!(resolve(root, bad), None, "{bad}");
        }
    }

    #[test]
    fn glob() {
        assert!(glob_match("/video/*/seg/0.ts", "/video/demo/seg/0.ts"));
        assert!(glob_match("*", "/anything"));
        assert!(glob_match("*.ts", "/video/d/seg/3.ts"));
        assert!(!glob_match("*.ts", "/video/d/ltc/3.jpg"));
        assert!(glob_match("/a/*/c/*", "/a/b/c/d"));
        assert!(!glob_match("/a*a", "/a"));
        assert!(glob_match("/exact", "/exact"));
        assert!(!glob_match("/exact", "/exact2"));
    }

    #[test]
    fn fault_sequences_are_consumed_in_order() {
        let mut plan = FaultPlan::new().with("*/seg/0.ts", &[503, 200]);
        assert_eq!(plan.take("/video/v/seg/0.ts"), Some(503));
        assert_eq!(plan.take("/video/v/seg/1.ts"), None);
        assert_eq!(plan.take("/video/v/seg/0.ts"), Some(200));
        assert_eq!(plan.take("/video/v/seg/0.ts"), None);
    }

    #[test]
    fn fault_plan_file_form() {
        let plan: FaultPlan = serde_json::from_str(r#"{"/video/*/seg/0.ts": [503, 200]}"#).unwrap();
        assert_eq!(plan, FaultPlan::new().with("/video/*/seg/0.ts", &[503, 200]));
    }
}
