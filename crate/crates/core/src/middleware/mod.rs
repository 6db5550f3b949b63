//! Server tier: absorbs device uploads over the wire protocol, applies each
//! idempotency key once, persists, answers status queries, and is the only
//! path by which applications reach the core-lending stub.
//!
//! A persistent store lives in a directory with `records/<app_id>.json`
//! (canonical manifests), `blobs/<digest>.fsq1` and `keys.log` (one journal
//! entry per applied key).

mod server;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use crate::hash::{sha256, sha256_hex, sha256_parts};
use crate::journal::{JournalError, JournalFile};
use crate::records::{ApplicationRecord, RecordError, Status};
use crate::syncq::write_atomic;
use crate::wire::{Frame, FrameHandler, ItemKey, ProtocolError, Reply, PROTO_VERSION};

pub use server::{serve, ServeOptions, ServerHandle};

const RECORDS: &str = "records";
const BLOBS: &str = "blobs";
const KEYS: &str = "keys.log";

#[derive(Debug, thiserror::Error)]
pub enum MiddlewareError {
    #[error("store I/O: {0}")]
    Io(#[from] io::Error),
    #[error("keys journal: {0}")]
    Journal(#[from] JournalError),
    #[error("stored record {path}: {source}")]
    Record { path: PathBuf, source: RecordError },
    #[error("stored blob {0} does not match its digest")]
    Blob(String),
}

/// Something the core-lending stub has been told.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoreEvent {
    /// A complete application handed over for review.
    Forwarded { app_id: String },
    /// The stub's decision on a forwarded application.
    Decided { app_id: String, status: Status },
}

/// Stand-in for the core lending system. It has no listener of its own; the
/// only way to reach it is [`Middleware::forward_to_core`].
#[derive(Debug, Default)]
pub struct CoreStub {
    received: Vec<CoreEvent>,
}

impl CoreStub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn received(&self) -> &[CoreEvent] {
        &self.received
    }

    pub(crate) fn receive(&mut self, event: CoreEvent) {
        self.received.push(event);
    }

    /// Approved when the low bit of SHA-256(app_id) is 0, Rejected otherwise.
    pub fn decision_for(app_id: &str) -> Status {
        if sha256(app_id.as_bytes())[31] & 1 == 0 {
            Status::Approved
        } else {
            Status::Rejected
        }
    }
}

#[derive(Debug)]
struct Upload {
    doc_id: String,
    total: u32,
    chunks: BTreeMap<u32, Vec<u8>>,
}

#[derive(Debug, Default)]
struct ServerStore {
    records: BTreeMap<String, ApplicationRecord>,
    blobs: BTreeMap<String, Arc<Vec<u8>>>,
    applied_keys: BTreeSet<ItemKey>,
    applied_mutations: u64,
    uploads: HashMap<ItemKey, Upload>,
    keys_log: Option<JournalFile>,
}

/// A status answer the middleware gave to a client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatusObservation {
    pub app_id: String,
    pub status: Option<Status>,
}

pub struct Middleware {
    store: RwLock<ServerStore>,
    trace: Mutex<Vec<StatusObservation>>,
    dir: Option<PathBuf>,
}

fn nack(key: ItemKey, reason: &str) -> Reply {
    Reply::one(Frame::Nack {
        key,
        reason: reason.into(),
    })
}

fn protocol_violation() -> Reply {
    Reply::closing(Frame::Nack {
        key: ItemKey::ZERO,
        reason: "protocol".into(),
    })
}

impl Middleware {
    pub fn in_memory() -> Self {
        Self {
            store: RwLock::new(ServerStore::default()),
            trace: Mutex::new(Vec::new()),
            dir: None,
        }
    }

    /// Open (or create) a persistent store in `dir` and load its contents.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, MiddlewareError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(RECORDS))?;
        fs::create_dir_all(dir.join(BLOBS))?;
        let (log, entries) = JournalFile::open(dir.join(KEYS))?;
        let mut store = ServerStore::default();
        for entry in entries {
            if let Ok(k) = <[u8; 32]>::try_from(entry.as_slice()) {
                store.applied_keys.insert(ItemKey(k));
            }
        }
        store.applied_mutations = store.applied_keys.len() as u64;
        for path in sorted_entries(&dir.join(RECORDS), "json")? {
            let rec =
                ApplicationRecord::from_manifest(&fs::read(&path)?).map_err(|source| MiddlewareError::Record {
                    path: path.clone(),
                    source,
                })?;
            store.records.insert(rec.app_id.clone(), rec);
        }
        for path in sorted_entries(&dir.join(BLOBS), "fsq1")? {
            let bytes = fs::read(&path)?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
            if sha256_hex(&bytes) != name {
                return Err(MiddlewareError::Blob(name));
            }
            store.blobs.insert(name, Arc::new(bytes));
        }
        store.keys_log = Some(log);
        Ok(Self {
            store: RwLock::new(store),
            trace: Mutex::new(Vec::new()),
            dir: Some(dir),
        })
    }

    /// A handler for one client connection.
    pub fn session(self: &Arc<Self>) -> Session {
        Session {
            mw: Arc::clone(self),
            greeted: false,
        }
    }

    pub fn applied_keys(&self) -> BTreeSet<ItemKey> {
        self.read().applied_keys.clone()
    }

    /// Number of mutations applied since the store was loaded, plus the keys
    /// loaded at startup.
    pub fn applied_mutations(&self) -> u64 {
        self.read().applied_mutations
    }

    pub fn record(&self, app_id: &str) -> Option<ApplicationRecord> {
        self.read().records.get(app_id).cloned()
    }

    pub fn records(&self) -> Vec<ApplicationRecord> {
        self.read().records.values().cloned().collect()
    }

    pub fn blob(&self, digest_hex: &str) -> Option<Arc<Vec<u8>>> {
        self.read().blobs.get(digest_hex).cloned()
    }

    pub fn blob_count(&self) -> usize {
        self.read().blobs.len()
    }

    /// Every status the middleware has reported to a client, in order.
    pub fn status_trace(&self) -> Vec<StatusObservation> {
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Checks that hold after any sequence of operations: one applied
    /// mutation per key and every blob matching its digest.
    pub fn check_invariants(&self) -> Result<(), String> {
        let s = self.read();
        if s.applied_mutations != s.applied_keys.len() as u64 {
            return Err(format!(
                "{} mutations applied for {} keys",
                s.applied_mutations,
                s.applied_keys.len()
            ));
        }
        for (name, bytes) in &s.blobs {
            if sha256_hex(bytes) != *name {
                return Err(format!("blob {name} does not match its digest"));
            }
        }
        Ok(())
    }

    /// Move every complete Submitted application to UnderReview and hand it
    /// to `core`. Returns how many were forwarded.
    pub fn forward_to_core(&self, core: &mut CoreStub) -> Result<usize, MiddlewareError> {
        let mut s = self.write();
        let ready: Vec<String> = s
            .records
            .values()
            .filter(|r| r.status == Status::Submitted)
            .filter(|r| r.documents.iter().all(|d| s.blobs.contains_key(&d.digest)))
            .map(|r| r.app_id.clone())
            .collect();
        for app_id in &ready {
            let rec = &s.records[app_id];
            let next = rec
                .transition_at(Status::UnderReview, rec.updated_at + 1)
                .expect("Submitted -> UnderReview");
            self.put_record(&mut s, next)?;
            core.receive(CoreEvent::Forwarded { app_id: app_id.clone() });
        }
        Ok(ready.len())
    }

    /// Apply the stub's decision to every application under review.
    pub fn core_decide(&self, core: &mut CoreStub) -> Result<usize, MiddlewareError> {
        let mut s = self.write();
        let pending: Vec<String> = s
            .records
            .values()
            .filter(|r| r.status == Status::UnderReview)
            .map(|r| r.app_id.clone())
            .collect();
        for app_id in &pending {
            let status = CoreStub::decision_for(app_id);
            let rec = &s.records[app_id];
            let next = rec
                .transition_at(status, rec.updated_at + 1)
                .expect("UnderReview -> decision");
            self.put_record(&mut s, next)?;
            core.receive(CoreEvent::Decided {
                app_id: app_id.clone(),
                status,
            });
        }
        Ok(pending.len())
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, ServerStore> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, ServerStore> {
        self.store.write().unwrap_or_else(|e| e.into_inner())
    }

    fn put_record(&self, s: &mut ServerStore, rec: ApplicationRecord) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            write_atomic(
                &dir.join(RECORDS).join(format!("{}.json", rec.app_id)),
                &rec.to_manifest(),
            )?;
        }
        s.records.insert(rec.app_id.clone(), rec);
        Ok(())
    }

    fn put_blob(&self, s: &mut ServerStore, digest: String, bytes: Vec<u8>) -> io::Result<()> {
        if s.blobs.contains_key(&digest) {
            return Ok(());
        }
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join(BLOBS).join(format!("{digest}.fsq1")), &bytes)?;
        }
        s.blobs.insert(digest, Arc::new(bytes));
        Ok(())
    }

    fn commit_key(&self, s: &mut ServerStore, key: ItemKey) -> io::Result<()> {
        if let Some(log) = s.keys_log.as_mut() {
            log.append(&key.0)?;
        }
        s.applied_keys.insert(key);
        s.applied_mutations += 1;
        Ok(())
    }

    fn put_record_frame(&self, key: ItemKey, manifest: &[u8], now_ms: u64) -> Reply {
        let mut s = self.write();
        if s.applied_keys.contains(&key) {
            return Reply::one(Frame::Ack { key });
        }
        let Ok(rec) = ApplicationRecord::from_manifest(manifest) else {
            return nack(key, "bad-manifest");
        };
        if ItemKey(sha256_parts(&[manifest, rec.app_id.as_bytes()])) != key {
            return nack(key, "bad-key");
        }
        let rec = match rec.status {
            Status::Draft => match rec.transition_at(Status::Submitted, now_ms.max(rec.updated_at)) {
                Ok(r) => r,
                Err(_) => return nack(key, "bad-status"),
            },
            Status::Submitted => rec,
            _ => return nack(key, "bad-status"),
        };
        if let Some(existing) = s.records.get(&rec.app_id) {
            if existing.status != Status::Submitted {
                return nack(key, "conflict");
            }
            let relabels_doc = rec.documents.iter().any(|d| {
                existing
                    .documents
                    .iter()
                    .any(|e| e.doc_id == d.doc_id && e.digest != d.digest)
            });
            if relabels_doc {
                return nack(key, "conflict");
            }
        }
        match self.put_record(&mut s, rec).and_then(|()| self.commit_key(&mut s, key)) {
            Ok(()) => Reply::one(Frame::Ack { key }),
            Err(_) => nack(key, "storage"),
        }
    }

    fn put_chunk(&self, key: ItemKey, doc_id: String, seq: u32, total: u32, chunk: Vec<u8>) {
        let mut s = self.write();
        if s.applied_keys.contains(&key) {
            return;
        }
        let up = s.uploads.entry(key).or_insert_with(|| Upload {
            doc_id: doc_id.clone(),
            total,
            chunks: BTreeMap::new(),
        });
        if up.doc_id != doc_id || up.total != total {
            *up = Upload {
                doc_id,
                total,
                chunks: BTreeMap::new(),
            };
        }
        up.chunks.insert(seq, chunk);
    }

    fn doc_done(&self, key: ItemKey, digest: [u8; 32]) -> Reply {
        let mut s = self.write();
        if s.applied_keys.contains(&key) {
            return Reply::one(Frame::Ack { key });
        }
        let Some(up) = s.uploads.get(&key) else {
            return nack(key, "unknown-key");
        };
        if up.chunks.len() as u32 != up.total {
            return nack(key, "incomplete");
        }
        let up = s.uploads.remove(&key).expect("checked above");
        let payload: Vec<u8> = up.chunks.into_values().flatten().collect();
        let actual = sha256(&payload);
        let hex = hex::encode(actual);
        let declared_elsewhere = s
            .records
            .values()
            .flat_map(|r| r.documents.iter())
            .any(|d| d.doc_id == up.doc_id && d.digest != hex);
        if actual != digest || declared_elsewhere {
            return nack(key, "bad-digest");
        }
        match self
            .put_blob(&mut s, hex, payload)
            .and_then(|()| self.commit_key(&mut s, key))
        {
            Ok(()) => Reply::one(Frame::Ack { key }),
            Err(_) => nack(key, "storage"),
        }
    }

    fn status(&self, app_ids: Vec<String>) -> Reply {
        let entries: Vec<(String, Option<Status>)> = {
            let s = self.read();
            app_ids
                .into_iter()
                .map(|id| {
                    let st = s.records.get(&id).map(|r| r.status);
                    (id, st)
                })
                .collect()
        };
        self.trace
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .extend(entries.iter().map(|(app_id, status)| StatusObservation {
                app_id: app_id.clone(),
                status: *status,
            }));
        Reply::one(Frame::StatusResp { entries })
    }
}

fn sorted_entries(dir: &Path, ext: &str) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

/// Server end of one client connection.
pub struct Session {
    mw: Arc<Middleware>,
    greeted: bool,
}

impl FrameHandler for Session {
    fn handle(&mut self, frame: Frame, now_ms: u64) -> Reply {
        match frame {
            Frame::Hello { proto_version, .. } => {
                if proto_version != PROTO_VERSION {
                    return protocol_violation();
                }
                self.greeted = true;
                Reply::one(Frame::Hello {
                    proto_version: PROTO_VERSION,
                    device_id: "middleware".into(),
                })
            }
            Frame::Bye => Reply {
                frames: Vec::new(),
                close: true,
            },
            _ if !self.greeted => protocol_violation(),
            Frame::PutRecord { key, manifest } => self.mw.put_record_frame(key, &manifest, now_ms),
            Frame::PutDocChunk {
                key,
                doc_id,
                seq,
                total,
                chunk,
            } => {
                self.mw.put_chunk(key, doc_id, seq, total, chunk);
                Reply::none()
            }
            Frame::DocDone { key, digest } => self.mw.doc_done(key, digest),
            Frame::StatusReq { app_ids } => self.mw.status(app_ids),
            Frame::Ack { .. } | Frame::Nack { .. } | Frame::StatusResp { .. } => protocol_violation(),
        }
    }

    fn malformed(&mut self, _err: &ProtocolError) -> Reply {
        protocol_violation()
    }
}
