//! XML document store with path-addressed CRUD, change subscriptions, and an
//! append-only change log.
//!
//! Writes go through a single write lock, so versions and change events are
//! totally ordered; readers see whole committed documents only. Every path
//! has its own version counter that increases by one on each successful put
//! or delete and survives deletion.
//!
//! Change log record layout (all integers big-endian):
//!
//! ```text
//! u32 record length (bytes that follow)
//! u64 version
//! u8  kind (1 = put, 2 = delete)
//! u16 path length, path bytes
//! [u8; 32] SHA-256 of the content
//! u32 content length, content bytes
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{HttpRequest, HttpResponse};
use crate::netsim::{Addr, Ctx, Node};
use crate::xml;

#[derive(Debug, Error)]
pub enum XdmsError {
    #[error("invalid document path {0:?}")]
    InvalidPath(String),
    #[error("malformed XML for {path}: {reason}")]
    MalformedContent { path: String, reason: String },
    #[error("no document at {0}")]
    NotFound(String),
    #[error("change log corrupt at byte {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeKind {
    Put,
    Delete,
}

impl ChangeKind {
    fn code(self) -> u8 {
        match self {
            ChangeKind::Put => 1,
            ChangeKind::Delete => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDocument {
    pub path: String,
    pub content: Arc<str>,
    pub version: u64,
    pub modified_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeEvent {
    pub path: String,
    pub version: u64,
    pub kind: ChangeKind,
    /// Document content at `version`; `None` for deletes.
    pub content: Option<Arc<str>>,
    pub at: u64,
}

pub type WatchId = u64;

struct Watch {
    prefix: String,
    queue: Vec<ChangeEvent>,
}

#[derive(Default)]
struct State {
    docs: BTreeMap<String, StoredDocument>,
    versions: HashMap<String, u64>,
    watches: BTreeMap<WatchId, Watch>,
    next_watch: WatchId,
}

#[derive(Default)]
pub struct Xdms {
    state: RwLock<State>,
    log: Mutex<Option<BufWriter<File>>>,
    log_path: Option<PathBuf>,
}

fn check_segments(path: &str, allow_trailing_slash: bool) -> bool {
    let Some(rest) = path.strip_prefix('/') else {
        return false;
    };
    if rest.is_empty() {
        return allow_trailing_slash;
    }
    let rest = match rest.strip_suffix('/') {
        Some(r) if allow_trailing_slash => r,
        Some(_) => return false,
        None => rest,
    };
    rest.split('/')
        .all(|seg| !seg.is_empty() && seg != "." && seg != ".." && !seg.contains(['\\', '\0']))
}

/// Document paths: absolute, no empty, `.` or `..` segments, no trailing slash.
pub fn validate_path(path: &str) -> Result<(), XdmsError> {
    if check_segments(path, false) {
        Ok(())
    } else {
        Err(XdmsError::InvalidPath(path.to_string()))
    }
}

/// Prefix patterns follow the same rules but may end with `/`.
pub fn validate_prefix(prefix: &str) -> Result<(), XdmsError> {
    if check_segments(prefix, true) {
        Ok(())
    } else {
        Err(XdmsError::InvalidPath(prefix.to_string()))
    }
}

impl Xdms {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a store backed by a change log, replaying any existing records.
    pub fn open(log_path: impl AsRef<Path>) -> Result<Self, XdmsError> {
        let log_path = log_path.as_ref().to_path_buf();
        let mut state = State::default();
        if log_path.exists() {
            let mut buf = Vec::new();
            File::open(&log_path)?.read_to_end(&mut buf)?;
            for rec in decode_log(&buf)? {
                apply_record(&mut state, rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Xdms {
            state: RwLock::new(state),
            log: Mutex::new(Some(BufWriter::new(file))),
            log_path: Some(log_path),
        })
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    pub fn flush(&self) -> Result<(), XdmsError> {
        if let Some(w) = self.log.lock().expect("log lock").as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    pub fn put_document(&self, path: &str, content: &str) -> Result<u64, XdmsError> {
        self.put_document_at(path, content, 0)
    }

    pub fn put_document_at(&self, path: &str, content: &str, now: u64) -> Result<u64, XdmsError> {
        validate_path(path)?;
        xml::check_well_formed(content).map_err(|reason| XdmsError::MalformedContent {
            path: path.to_string(),
            reason,
        })?;
        let mut st = self.state.write().expect("state lock");
        let version = st.versions.get(path).copied().unwrap_or(0) + 1;
        self.append_log(version, ChangeKind::Put, path, content.as_bytes())?;
        let content: Arc<str> = Arc::from(content);
        st.versions.insert(path.to_string(), version);
        st.docs.insert(
            path.to_string(),
            StoredDocument {
                path: path.to_string(),
                content: content.clone(),
                version,
                modified_at: now,
            },
        );
        publish(
            &mut st,
            ChangeEvent {
                path: path.to_string(),
                version,
                kind: ChangeKind::Put,
                content: Some(content),
                at: now,
            },
        );
        Ok(version)
    }

    pub fn get_document(&self, path: &str) -> Result<(Arc<str>, u64), XdmsError> {
        let st = self.state.read().expect("state lock");
        st.docs
            .get(path)
            .map(|d| (d.content.clone(), d.version))
            .ok_or_else(|| XdmsError::NotFound(path.to_string()))
    }

    pub fn document(&self, path: &str) -> Option<StoredDocument> {
        self.state.read().expect("state lock").docs.get(path).cloned()
    }

    pub fn delete_document(&self, path: &str) -> Result<(), XdmsError> {
        self.delete_document_at(path, 0).map(|_| ())
    }

    /// Returns the version the deletion was recorded under.
    pub fn delete_document_at(&self, path: &str, now: u64) -> Result<u64, XdmsError> {
        let mut st = self.state.write().expect("state lock");
        if !st.docs.contains_key(path) {
            return Err(XdmsError::NotFound(path.to_string()));
        }
        let version = st.versions.get(path).copied().unwrap_or(0) + 1;
        self.append_log(version, ChangeKind::Delete, path, b"")?;
        st.docs.remove(path);
        st.versions.insert(path.to_string(), version);
        publish(
            &mut st,
            ChangeEvent {
                path: path.to_string(),
                version,
                kind: ChangeKind::Delete,
                content: None,
                at: now,
            },
        );
        Ok(version)
    }

    /// Latest version recorded for `path`, including deletions; 0 if never written.
    pub fn version_of(&self, path: &str) -> u64 {
        let st = self.state.read().expect("state lock");
        st.versions.get(path).copied().unwrap_or(0)
    }

    /// `(path, version)` of every live document under `prefix`, in path order.
    pub fn list_collection(&self, prefix: &str) -> Vec<(String, u64)> {
        let st = self.state.read().expect("state lock");
        st.docs
            .range(prefix.to_string()..)
            .take_while(|(p, _)| p.starts_with(prefix))
            .map(|(p, d)| (p.clone(), d.version))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("state lock").docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every live document, keyed by path.
    pub fn snapshot(&self) -> BTreeMap<String, (Arc<str>, u64)> {
        let st = self.state.read().expect("state lock");
        st.docs
            .iter()
            .map(|(p, d)| (p.clone(), (d.content.clone(), d.version)))
            .collect()
    }

    pub fn subscribe_changes(&self, prefix: &str) -> Result<WatchId, XdmsError> {
        validate_prefix(prefix)?;
        let mut st = self.state.write().expect("state lock");
        st.next_watch += 1;
        let id = st.next_watch;
        st.watches.insert(
            id,
            Watch {
                prefix: prefix.to_string(),
                queue: Vec::new(),
            },
        );
        Ok(id)
    }

    pub fn unsubscribe(&self, id: WatchId) {
        self.state.write().expect("state lock").watches.remove(&id);
    }

    /// Takes the change events queued for a watcher, oldest first.
    pub fn drain_events(&self, id: WatchId) -> Vec<ChangeEvent> {
        let mut st = self.state.write().expect("state lock");
        st.watches
            .get_mut(&id)
            .map(|w| std::mem::take(&mut w.queue))
            .unwrap_or_default()
    }

    fn append_log(&self, version: u64, kind: ChangeKind, path: &str, content: &[u8]) -> Result<(), XdmsError> {
        let mut guard = self.log.lock().expect("log lock");
        if let Some(w) = guard.as_mut() {
            w.write_all(&encode_record(version, kind, path, content))?;
        }
        Ok(())
    }

    /// Serves one HTTP-style request: `GET`/`PUT`/`DELETE` on a document
    /// path, or `GET` on a collection prefix ending in `/`.
    pub fn handle_http(&self, req: &HttpRequest, now: u64) -> HttpResponse {
        let etag = |v: u64| format!("\"{v}\"");
        match req.method.as_str() {
            "GET" if req.path.ends_with('/') => {
                if validate_prefix(&req.path).is_err() {
                    return HttpResponse::new(400, "Bad Request");
                }
                let listing: String = self
                    .list_collection(&req.path)
                    .into_iter()
                    .map(|(p, v)| format!("{p} {v}\n"))
                    .collect();
                HttpResponse::new(200, "OK").with_body("text/plain", listing)
            }
            "GET" => match self.get_document(&req.path) {
                Ok((content, v)) => HttpResponse::new(200, "OK")
                    .with_header("ETag", etag(v))
                    .with_body("application/xml", content.as_bytes()),
                Err(_) => HttpResponse::new(404, "Not Found"),
            },
            "PUT" => {
                let Ok(body) = std::str::from_utf8(&req.body) else {
                    return HttpResponse::new(400, "Bad Request");
                };
                let existed = self.document(&req.path).is_some();
                match self.put_document_at(&req.path, body, now) {
                    Ok(v) if existed => HttpResponse::new(200, "OK").with_header("ETag", etag(v)),
                    Ok(v) => HttpResponse::new(201, "Created").with_header("ETag", etag(v)),
                    Err(XdmsError::InvalidPath(_)) => HttpResponse::new(400, "Bad Request"),
                    Err(XdmsError::MalformedContent { .. }) => HttpResponse::new(409, "Conflict"),
                    Err(_) => HttpResponse::new(500, "Internal Server Error"),
                }
            }
            "DELETE" => match self.delete_document_at(&req.path, now) {
                Ok(v) => HttpResponse::new(200, "OK").with_header("ETag", etag(v)),
                Err(XdmsError::NotFound(_)) => HttpResponse::new(404, "Not Found"),
                Err(_) => HttpResponse::new(500, "Internal Server Error"),
            },
            _ => HttpResponse::new(405, "Method Not Allowed"),
        }
    }
}

fn publish(st: &mut State, event: ChangeEvent) {
    for w in st.watches.values_mut() {
        if event.path.starts_with(&w.prefix) {
            w.queue.push(event.clone());
        }
    }
}

pub fn encode_record(version: u64, kind: ChangeKind, path: &str, content: &[u8]) -> Vec<u8> {
    let mut rec = Vec::with_capacity(51 + path.len() + content.len());
    rec.extend_from_slice(&version.to_be_bytes());
    rec.push(kind.code());
    rec.extend_from_slice(&(path.len() as u16).to_be_bytes());
    rec.extend_from_slice(path.as_bytes());
    rec.extend_from_slice(&Sha256::digest(content));
    rec.extend_from_slice(&(content.len() as u32).to_be_bytes());
    rec.extend_from_slice(content);
    let mut out = (rec.len() as u32).to_be_bytes().to_vec();
    out.extend_from_slice(&rec);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub version: u64,
    pub kind: ChangeKind,
    pub path: String,
    pub content: String,
}

pub fn decode_log(buf: &[u8]) -> Result<Vec<LogRecord>, XdmsError> {
    let mut out = Vec::new();
    let mut off = 0usize;
    let corrupt = |offset: usize, reason: &str| XdmsError::CorruptLog {
        offset: offset as u64,
        reason: reason.to_string(),
    };
    while off < buf.len() {
        let start = off;
        let len = buf.get(off..off + 4).ok_or_else(|| corrupt(start, "truncated length"))?;
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        let rec = buf.get(off + 4..off + 4 + len).ok_or_else(|| corrupt(start, "truncated record"))?;
        off += 4 + len;

        let mut p = 0;
        let mut field = |n: usize| {
            let f = rec.get(p..p + n);
            p += n;
            f.ok_or_else(|| corrupt(start, "record too short"))
        };
        let version = u64::from_be_bytes(field(8)?.try_into().expect("8 bytes"));
        let kind = match field(1)?[0] {
            1 => ChangeKind::Put,
            2 => ChangeKind::Delete,
            _ => return Err(corrupt(start, "unknown change kind")),
        };
        let plen = u16::from_be_bytes(field(2)?.try_into().expect("2 bytes")) as usize;
        let path = std::str::from_utf8(field(plen)?)
            .map_err(|_| corrupt(start, "path not UTF-8"))?
            .to_string();
        let hash = field(32)?.to_vec();
        let clen = u32::from_be_bytes(field(4)?.try_into().expect("4 bytes")) as usize;
        let content = field(clen)?;
        if Sha256::digest(content).as_slice() != hash.as_slice() {
            return Err(corrupt(start, "content hash mismatch"));
        }
        let content = std::str::from_utf8(content)
            .map_err(|_| corrupt(start, "content not UTF-8"))?
            .to_string();
        out.push(LogRecord {
            version,
            kind,
            path,
            content,
        });
    }
    Ok(out)
}

fn apply_record(st: &mut State, rec: LogRecord) {
    st.versions.insert(rec.path.clone(), rec.version);
    match rec.kind {
        ChangeKind::Put => {
            st.docs.insert(
                rec.path.clone(),
                StoredDocument {
                    path: rec.path,
                    content: Arc::from(rec.content),
                    version: rec.version,
                    modified_at: 0,
                },
            );
        }
        ChangeKind::Delete => {
            st.docs.remove(&rec.path);
        }
    }
}

/// Exposes a shared store over the HTTP-style interface on the simulated network.
pub struct XdmsHttpNode {
    store: Arc<Xdms>,
}

impl XdmsHttpNode {
    pub fn new(store: Arc<Xdms>) -> Self {
        XdmsHttpNode { store }
    }
}

impl Node for XdmsHttpNode {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: &Addr, from: &Addr, payload: &[u8]) {
        let resp = match HttpRequest::parse(payload) {
            Some(req) => self.store.handle_http(&req, ctx.now()),
            None => HttpResponse::new(400, "Bad Request"),
        };
        ctx.send(local, from, resp.to_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versions_increment_per_path() {
        let x = Xdms::new();
        assert_eq!(x.put_document("/sensors/a.xml", "<a/>").unwrap(), 1);
        assert_eq!(x.put_document("/sensors/a.xml", "<a>2</a>").unwrap(), 2);
        assert_eq!(x.put_document("/sensors/b.xml", "<b/>").unwrap(), 1);
        x.delete_document("/sensors/a.xml").unwrap();
        assert_eq!(x.version_of("/sensors/a.xml"), 3);
        assert_eq!(x.put_document("/sensors/a.xml", "<a/>").unwrap(), 4);
    }

    #[test]
    fn path_rules() {
        let x = Xdms::new();
        for bad in ["../escape", "/a/../b.xml", "/a//b.xml", "relative.xml", "/a/", "/", "/a/./b"] {
            assert!(matches!(x.put_document(bad, "<a/>"), Err(XdmsError::InvalidPath(_))), "{bad}");
        }
        assert!(validate_prefix("/groups/").is_ok());
        assert!(validate_prefix("/").is_ok());
        assert!(validate_prefix("groups/").is_err());
        assert!(matches!(
            x.put_document("/a.xml", "<a>"),
            Err(XdmsError::MalformedContent { .. })
        ));
    }

    #[test]
    fn get_and_delete() {
        let x = Xdms::new();
        x.put_document("/g/t.xml", "<g/>").unwrap();
        assert_eq!(&*x.get_document("/g/t.xml").unwrap().0, "<g/>");
        x.delete_document("/g/t.xml").unwrap();
        assert!(matches!(x.get_document("/g/t.xml"), Err(XdmsError::NotFound(_))));
        assert!(matches!(x.delete_document("/g/t.xml"), Err(XdmsError::NotFound(_))));
        assert!(x.list_collection("/g/").is_empty());
    }

    #[test]
    fn prefix_subscriptions() {
        let x = Xdms::new();
        let w = x.subscribe_changes("/groups/by-type/").unwrap();
        x.put_document("/groups/by-type/temperature.xml", "<group/>").unwrap();
        x.put_document("/groups/by-location/France.xml", "<group/>").unwrap();
        x.delete_document("/groups/by-type/temperature.xml").unwrap();
        let ev = x.drain_events(w);
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].version, ev[0].kind), (1, ChangeKind::Put));
        assert_eq!((ev[1].version, ev[1].kind), (2, ChangeKind::Delete));
        assert!(x.drain_events(w).is_empty());
    }

    #[test]
    fn http_interface() {
        let x = Xdms::new();
        let put = HttpRequest::new("PUT", "/sensors/a.xml").with_body("application/xml", "<s/>");
        assert_eq!(x.handle_http(&put, 0).status, 201);
        assert_eq!(x.handle_http(&put, 0).status, 200);
        let get = x.handle_http(&HttpRequest::new("GET", "/sensors/a.xml"), 0);
        assert_eq!((get.status, get.body.as_slice()), (200, &b"<s/>"[..]));
        assert_eq!(get.header("ETag"), Some("\"2\""));
        let list = x.handle_http(&HttpRequest::new("GET", "/sensors/"), 0);
        assert_eq!(list.body, b"/sensors/a.xml 2\n");
        let bad = HttpRequest::new("PUT", "/x.xml").with_body("application/xml", "<oops");
        assert_eq!(x.handle_http(&bad, 0).status, 409);
        assert_eq!(x.handle_http(&HttpRequest::new("DELETE", "/sensors/a.xml"), 0).status, 200);
        assert_eq!(x.handle_http(&HttpRequest::new("GET", "/sensors/a.xml"), 0).status, 404);
    }

    #[test]
    fn change_log_replay_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xdms.log");
        {
            let x = Xdms::open(&path).unwrap();
            x.put_document("/a.xml", "<a/>").unwrap();
            x.put_document("/b.xml", "<b/>").unwrap();
            x.delete_document("/a.xml").unwrap();
            x.flush().unwrap();
        }
        let x = Xdms::open(&path).unwrap();
        assert_eq!(x.len(), 1);
        assert_eq!(x.version_of("/a.xml"), 2);
        assert_eq!(x.put_document("/a.xml", "<a/>").unwrap(), 3);
        drop(x);

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        assert!(matches!(decode_log(&bytes), Err(XdmsError::CorruptLog { .. })));
        assert!(matches!(decode_log(&bytes[..bytes.len() - 3]), Err(XdmsError::CorruptLog { .. })));
    }
}
