use std::collections::{BTreeSet, HashMap};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::storage::{DirStorage, Storage};
use crate::hash::{sha256_hex, sha256_parts};
use crate::journal::{self, JournalError};
use crate::records::{now_ms, ApplicationRecord};
use crate::wire::ItemKey;

#[derive(Debug, thiserror::Error)]
pub enum QueueError {
    #[error("invalid item: {0}")]
    Validation(String),
    #[error("queue storage: {0}")]
    Storage(#[from] io::Error),
    #[error("recovery failed at journal entry {entry}: {reason}")]
    Recovery { entry: usize, reason: String },
    #[error("unknown item {0}")]
    UnknownKey(ItemKey),
    #[error("blob for {0} does not match its digest")]
    BlobMismatch(ItemKey),
}

impl From<JournalError> for QueueError {
    fn from(e: JournalError) -> Self {
        match e {
            JournalError::ChecksumMismatch { index, offset } => QueueError::Recovery {
                entry: index,
                reason: format!("checksum mismatch at byte {offset}"),
            },
            JournalError::Oversized { index, offset, len } => QueueError::Recovery {
                entry: index,
                reason: format!("implausible length {len} at byte {offset}"),
            },
            JournalError::Io(e) => QueueError::Storage(e),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemKind {
    RecordManifest,
    Document,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ItemState {
    Pending,
    InFlight,
    Acked,
}

/// What an outbound payload is and which application it belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outbound {
    Record { app_id: String },
    Document { app_id: String, doc_id: String },
}

impl Outbound {
    pub fn kind(&self) -> ItemKind {
        match self {
            Outbound::Record { .. } => ItemKind::RecordManifest,
            Outbound::Document { .. } => ItemKind::Document,
        }
    }

    pub fn app_id(&self) -> &str {
        match self {
            Outbound::Record { app_id } | Outbound::Document { app_id, .. } => app_id,
        }
    }
}

/// Idempotency key of a payload belonging to `app_id`.
pub fn item_key(payload: &[u8], app_id: &str) -> ItemKey {
    ItemKey(sha256_parts(&[payload, app_id.as_bytes()]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueueItem {
    pub key: ItemKey,
    pub kind: ItemKind,
    pub app_id: String,
    pub doc_id: Option<String>,
    /// Blob name: hex SHA-256 of the payload.
    pub blob: String,
    pub size: u64,
    pub attempts: u32,
    pub enqueued_at: u64,
    pub state: ItemState,
    /// Backoff: not eligible for sending before this time. Not persisted.
    pub not_before_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
enum Event {
    Enqueued {
        key: String,
        kind: ItemKind,
        app_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        doc_id: Option<String>,
        blob: String,
        size: u64,
        enqueued_at: u64,
    },
    Attempted {
        key: String,
        attempts: u32,
    },
    Acked {
        key: String,
    },
}

/// Crash-durable outbound queue.
///
/// Enqueue writes the payload blob durably, then appends a journal entry;
/// the item exists once that entry is committed. Acks and failed attempts
/// are journaled too. In-flight state lives only in memory, so after a
/// crash those items come back as Pending.
// TODO: compact the journal (drop entries of acked items) once it outgrows the live set.
pub struct Queue<S: Storage = DirStorage> {
    storage: S,
    items: Vec<QueueItem>,
    index: HashMap<ItemKey, usize>,
    last_enqueued_at: u64,
}

impl Queue<DirStorage> {
    /// Open or create the queue directory at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, QueueError> {
        Self::recover(DirStorage::open(dir)?)
    }
}

impl<S: Storage> Queue<S> {
    /// Rebuild the queue from its journal. A torn trailing entry is discarded.
    pub fn recover(mut storage: S) -> Result<Self, QueueError> {
        let bytes = storage.read_journal()?;
        let scan = journal::scan(&bytes)?;
        if scan.torn_bytes > 0 {
            storage.truncate_journal(scan.committed_len)?;
        }
        let mut q = Self {
            storage,
            items: Vec::new(),
            index: HashMap::new(),
            last_enqueued_at: 0,
        };
        for (entry, payload) in scan.entries.iter().enumerate() {
            let fail = |reason: String| QueueError::Recovery { entry, reason };
            let event: Event = serde_json::from_slice(payload).map_err(|e| fail(e.to_string()))?;
            q.apply(event).map_err(fail)?;
        }
        Ok(q)
    }

    fn apply(&mut self, event: Event) -> Result<(), String> {
        let parse = |k: &str| ItemKey::from_hex(k).ok_or_else(|| format!("bad key {k:?}"));
        match event {
            Event::Enqueued {
                key,
                kind,
                app_id,
                doc_id,
                blob,
                size,
                enqueued_at,
            } => {
                let key = parse(&key)?;
                if self.index.contains_key(&key) {
                    return Ok(());
                }
                self.last_enqueued_at = self.last_enqueued_at.max(enqueued_at);
                self.index.insert(key, self.items.len());
                self.items.push(QueueItem {
                    key,
                    kind,
                    app_id,
                    doc_id,
                    blob,
                    size,
                    attempts: 0,
                    enqueued_at,
                    state: ItemState::Pending,
                    not_before_ms: 0,
                });
            }
            Event::Attempted { key, attempts } => {
                let key = parse(&key)?;
                let i = *self
                    .index
                    .get(&key)
                    .ok_or_else(|| format!("attempt for unknown item {key}"))?;
                self.items[i].attempts = attempts;
            }
            Event::Acked { key } => {
                let key = parse(&key)?;
                let i = *self
                    .index
                    .get(&key)
                    .ok_or_else(|| format!("ack for unknown item {key}"))?;
                self.items[i].state = ItemState::Acked;
            }
        }
        Ok(())
    }

    fn log(&mut self, event: &Event) -> Result<(), QueueError> {
        let payload = serde_json::to_vec(event).expect("event serializes");
        self.storage.append_journal(&journal::encode_entry(&payload))?;
        Ok(())
    }

    pub fn enqueue(&mut self, item: Outbound, payload: &[u8]) -> Result<ItemKey, QueueError> {
        self.enqueue_at(item, payload, now_ms())
    }

    /// Enqueue with an explicit clock. `enqueued_at` is forced strictly
    /// increasing so (enqueued_at, key) order is insertion order.
    pub fn enqueue_at(&mut self, item: Outbound, payload: &[u8], now_ms: u64) -> Result<ItemKey, QueueError> {
        if payload.is_empty() {
            return Err(QueueError::Validation("empty payload".into()));
        }
        if item.app_id().is_empty() {
            return Err(QueueError::Validation("empty app_id".into()));
        }
        let key = item_key(payload, item.app_id());
        if self.index.contains_key(&key) {
            return Ok(key);
        }
        let blob = sha256_hex(payload);
        self.storage.put_blob(&blob, payload)?;
        let enqueued_at = now_ms.max(self.last_enqueued_at + 1);
        let (kind, app_id, doc_id) = match item {
            Outbound::Record { app_id } => (ItemKind::RecordManifest, app_id, None),
            Outbound::Document { app_id, doc_id } => (ItemKind::Document, app_id, Some(doc_id)),
        };
        let event = Event::Enqueued {
            key: key.to_hex(),
            kind,
            app_id,
            doc_id,
            blob,
            size: payload.len() as u64,
            enqueued_at,
        };
        self.log(&event)?;
        self.apply(event).expect("fresh key");
        Ok(key)
    }

    /// Queue a record's manifest followed by each of its documents, in the
    /// record's document order. `documents` must contain a payload for every
    /// attached DocumentRef (matched by digest).
    pub fn enqueue_application(
        &mut self,
        rec: &ApplicationRecord,
        documents: &[&[u8]],
        now_ms: u64,
    ) -> Result<Vec<ItemKey>, QueueError> {
        rec.validate().map_err(|e| QueueError::Validation(e.to_string()))?;
        let by_digest: HashMap<String, &[u8]> = documents.iter().map(|d| (sha256_hex(d), *d)).collect();
        let payloads = rec
            .documents
            .iter()
            .map(|d| {
                by_digest
                    .get(&d.digest)
                    .copied()
                    .ok_or_else(|| QueueError::Validation(format!("no payload for document {}", d.doc_id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut keys = vec![self.enqueue_at(
            Outbound::Record {
                app_id: rec.app_id.clone(),
            },
            &rec.to_manifest(),
            now_ms,
        )?];
        for (d, payload) in rec.documents.iter().zip(payloads) {
            keys.push(self.enqueue_at(
                Outbound::Document {
                    app_id: rec.app_id.clone(),
                    doc_id: d.doc_id.clone(),
                },
                payload,
                now_ms,
            )?);
        }
        Ok(keys)
    }

    /// All items in dispatch order (enqueued_at, then key).
    pub fn items(&self) -> &[QueueItem] {
        &self.items
    }

    pub fn get(&self, key: &ItemKey) -> Option<&QueueItem> {
        self.index.get(key).map(|&i| &self.items[i])
    }

    pub fn pending(&self) -> impl Iterator<Item = &QueueItem> {
        self.items.iter().filter(|i| i.state == ItemState::Pending)
    }

    pub fn pending_count(&self) -> usize {
        self.pending().count()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct application ids referenced by queued items.
    pub fn app_ids(&self) -> BTreeSet<String> {
        self.items.iter().map(|i| i.app_id.clone()).collect()
    }

    /// The payload of an item, checked against its blob digest.
    pub fn payload(&self, key: &ItemKey) -> Result<Vec<u8>, QueueError> {
        let item = self.get(key).ok_or(QueueError::UnknownKey(*key))?;
        let bytes = self.storage.get_blob(&item.blob)?;
        if sha256_hex(&bytes) != item.blob {
            return Err(QueueError::BlobMismatch(*key));
        }
        Ok(bytes)
    }

    fn slot(&mut self, key: &ItemKey) -> Result<&mut QueueItem, QueueError> {
        let i = *self.index.get(key).ok_or(QueueError::UnknownKey(*key))?;
        Ok(&mut self.items[i])
    }

    pub(crate) fn set_in_flight(&mut self, key: &ItemKey) -> Result<(), QueueError> {
        let item = self.slot(key)?;
        if item.state == ItemState::Pending {
            item.state = ItemState::InFlight;
        }
        Ok(())
    }

    /// Durably mark an item delivered. Returns false if it already was.
    pub fn mark_acked(&mut self, key: &ItemKey) -> Result<bool, QueueError> {
        if self.slot(key)?.state == ItemState::Acked {
            return Ok(false);
        }
        self.log(&Event::Acked { key: key.to_hex() })?;
        self.slot(key)?.state = ItemState::Acked;
        Ok(true)
    }

    /// Durably count a failed attempt, return the item to Pending and hold
    /// it back until `not_before_ms`. Returns the new attempt count.
    pub fn mark_failed(&mut self, key: &ItemKey, not_before_ms: u64) -> Result<u32, QueueError> {
        let item = self.slot(key)?;
        if item.state == ItemState::Acked {
            return Ok(item.attempts);
        }
        let attempts = item.attempts + 1;
        self.log(&Event::Attempted {
            key: key.to_hex(),
            attempts,
        })?;
        let item = self.slot(key)?;
        item.attempts = attempts;
        item.state = ItemState::Pending;
        item.not_before_ms = not_before_ms;
        Ok(attempts)
    }

    /// Return every in-flight item to Pending without counting an attempt.
    pub(crate) fn release_in_flight(&mut self) {
        for item in &mut self.items {
            if item.state == ItemState::InFlight {
                item.state = ItemState::Pending;
            }
        }
    }

    pub fn storage(&self) -> &S {
        &self.storage
    }

    pub(crate) fn storage_mut(&mut self) -> &mut S {
        &mut self.storage
    }

    pub fn into_storage(self) -> S {
        self.storage
    }
}
