use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use super::queue::{ItemKind, Queue, QueueError};
use super::storage::Storage;
use crate::backoff::Backoff;
use crate::hash::sha256;
use crate::records::Status;
use crate::rng::SplitMix64;
use crate::transport::{Transport, TransportError};
use crate::wire::{Frame, ItemKey, PROTO_VERSION};

#[derive(Clone, Debug, PartialEq)]
pub struct SyncConfig {
    pub device_id: String,
    /// Items sent before waiting for their replies.
    pub batch: usize,
    pub chunk_size: usize,
    pub response_timeout_ms: u64,
    pub hello_attempts: u32,
    /// Failed attempts an item may use up in one session before the session
    /// stops trying it.
    pub max_attempts_per_session: u32,
    pub backoff: Backoff,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            device_id: "device".into(),
            batch: 8,
            chunk_size: 4096,
            response_timeout_ms: 5_000,
            hello_attempts: 3,
            max_attempts_per_session: 6,
            backoff: Backoff::default(),
            seed: 0,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<(), SyncError> {
        if self.batch == 0 {
            return Err(SyncError::Config("batch must be at least 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(SyncError::Config("chunk_size must be at least 1".into()));
        }
        if self.hello_attempts == 0 || self.max_attempts_per_session == 0 {
            return Err(SyncError::Config("attempt limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    #[error("invalid sync configuration: {0}")]
    Config(String),
    #[error("another sync session holds the queue lock: {0}")]
    Locked(std::io::Error),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionOutcome {
    /// Every item was acked, or the remaining ones used up this session's attempts.
    Completed,
    /// The connection failed or the server never answered the handshake.
    TransportFailure,
    /// The server rejected our framing; the session was aborted.
    ProtocolViolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SyncReport {
    /// Distinct items transmitted for the first time in this session.
    pub sent: u64,
    pub acked: u64,
    /// Transmissions of items that had already failed at least once.
    pub retried: u64,
    pub bytes_sent: u64,
    pub duration_ms: u64,
    pub outcome: SessionOutcome,
}

impl fmt::Display for SyncReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sent {} acked {} retried {} bytes {} duration {} ms ({:?})",
            self.sent, self.acked, self.retried, self.bytes_sent, self.duration_ms, self.outcome
        )
    }
}

/// The wire frames that carry one queued item.
pub fn item_frames(
    kind: ItemKind,
    key: ItemKey,
    doc_id: Option<&str>,
    payload: &[u8],
    chunk_size: usize,
) -> Vec<Frame> {
    match kind {
        ItemKind::RecordManifest => vec![Frame::PutRecord {
            key,
            manifest: payload.to_vec(),
        }],
        ItemKind::Document => {
            let doc_id = doc_id.unwrap_or_default().to_owned();
            let chunks: Vec<&[u8]> = payload.chunks(chunk_size.max(1)).collect();
            let total = chunks.len() as u32;
            let mut frames: Vec<Frame> = chunks
                .into_iter()
                .enumerate()
                .map(|(seq, chunk)| Frame::PutDocChunk {
                    key,
                    doc_id: doc_id.clone(),
                    seq: seq as u32,
                    total,
                    chunk: chunk.to_vec(),
                })
                .collect();
            frames.push(Frame::DocDone {
                key,
                digest: sha256(payload),
            });
            frames
        }
    }
}

enum Stop {
    Transport,
    Protocol,
}

impl From<TransportError> for Stop {
    fn from(_: TransportError) -> Self {
        Stop::Transport
    }
}

struct Meter<'t, T> {
    t: &'t mut T,
    bytes: u64,
}

impl<T: Transport> Meter<'_, T> {
    fn send(&mut self, frame: &Frame) -> Result<(), Stop> {
        self.bytes += frame.encoded_len() as u64;
        self.t.send(frame)?;
        Ok(())
    }
}

fn is_protocol_nack(frame: &Frame) -> bool {
    matches!(frame, Frame::Nack { key, reason } if *key == ItemKey::ZERO || reason == "protocol")
}

/// Send HELLO until the server answers with its own HELLO.
fn handshake<T: Transport>(m: &mut Meter<'_, T>, cfg: &SyncConfig, rng: &mut SplitMix64) -> Result<(), Stop> {
    let hello = Frame::Hello {
        proto_version: PROTO_VERSION,
        device_id: cfg.device_id.clone(),
    };
    for attempt in 0..cfg.hello_attempts {
        if attempt > 0 {
            let wait = cfg.backoff.delay_ms(attempt, rng);
            m.t.sleep_ms(wait);
        }
        m.send(&hello)?;
        let deadline = m.t.now_ms() + cfg.response_timeout_ms;
        loop {
            let left = deadline.saturating_sub(m.t.now_ms());
            match m.t.recv(left)? {
                Some(Frame::Hello { .. }) => return Ok(()),
                Some(f) if is_protocol_nack(&f) => return Err(Stop::Protocol),
                Some(_) => continue,
                None => break,
            }
        }
    }
    Err(Stop::Transport)
}

/// Drain the queue's pending items over `transport`.
///
/// Items go out in FIFO order, `batch` at a time, before their replies are
/// collected. ACK marks an item Acked; NACK or silence until the response
/// timeout counts a failed attempt and holds the item back for a backoff
/// delay. A late ACK for an item still pending is accepted. Transport
/// failure ends the session with partial counts; only storage errors are
/// returned as `Err`.
pub fn sync_session<S: Storage, T: Transport>(
    queue: &mut Queue<S>,
    transport: &mut T,
    cfg: &SyncConfig,
) -> Result<SyncReport, SyncError> {
    cfg.validate()?;
    queue.storage_mut().lock_session().map_err(SyncError::Locked)?;
    let res = run(queue, transport, cfg);
    queue.release_in_flight();
    queue.storage_mut().unlock_session();
    res
}

fn run<S: Storage, T: Transport>(
    queue: &mut Queue<S>,
    transport: &mut T,
    cfg: &SyncConfig,
) -> Result<SyncReport, SyncError> {
    let started = transport.now_ms();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut m = Meter { t: transport, bytes: 0 };
    let mut report = SyncReport {
        sent: 0,
        acked: 0,
        retried: 0,
        bytes_sent: 0,
        duration_ms: 0,
        outcome: SessionOutcome::Completed,
    };
    let outcome = match handshake(&mut m, cfg, &mut rng) {
        Ok(()) => drain(queue, &mut m, cfg, &mut rng, &mut report)?,
        Err(stop) => Err(stop),
    };
    report.outcome = match outcome {
        Ok(()) => {
            // Best effort: the session is over whether or not BYE arrives.
            let _ = m.send(&Frame::Bye);
            SessionOutcome::Completed
        }
        Err(Stop::Transport) => SessionOutcome::TransportFailure,
        Err(Stop::Protocol) => SessionOutcome::ProtocolViolation,
    };
    report.bytes_sent = m.bytes;
    report.duration_ms = m.t.now_ms().saturating_sub(started);
    Ok(report)
}

fn drain<S: Storage, T: Transport>(
    queue: &mut Queue<S>,
    m: &mut Meter<'_, T>,
    cfg: &SyncConfig,
    rng: &mut SplitMix64,
    report: &mut SyncReport,
) -> Result<Result<(), Stop>, SyncError> {
    let mut failures: HashMap<ItemKey, u32> = HashMap::new();
    let mut transmitted: BTreeSet<ItemKey> = BTreeSet::new();
    loop {
        let now = m.t.now_ms();
        let live: Vec<(ItemKey, u64)> = queue
            .pending()
            .filter(|i| failures.get(&i.key).copied().unwrap_or(0) < cfg.max_attempts_per_session)
            .map(|i| (i.key, i.not_before_ms))
            .collect();
        if live.is_empty() {
            return Ok(Ok(()));
        }
        let batch: Vec<ItemKey> = live
            .iter()
            .filter(|(_, nb)| *nb <= now)
            .take(cfg.batch)
            .map(|(k, _)| *k)
            .collect();
        if batch.is_empty() {
            let next = live.iter().map(|(_, nb)| *nb).min().unwrap_or(now);
            m.t.sleep_ms(next.saturating_sub(now));
            continue;
        }

        let mut outstanding: BTreeSet<ItemKey> = BTreeSet::new();
        for key in &batch {
            let item = queue.get(key).expect("pending item").clone();
            let payload = queue.payload(key)?;
            if transmitted.insert(*key) {
                report.sent += 1;
            }
            if item.attempts > 0 {
                report.retried += 1;
            }
            queue.set_in_flight(key)?;
            outstanding.insert(*key);
            for frame in item_frames(item.kind, item.key, item.doc_id.as_deref(), &payload, cfg.chunk_size) {
                if let Err(stop) = m.send(&frame) {
                    return Ok(Err(stop));
                }
            }
        }

        let deadline = m.t.now_ms() + cfg.response_timeout_ms;
        while !outstanding.is_empty() {
            let left = deadline.saturating_sub(m.t.now_ms());
            let frame = match m.t.recv(left) {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(_) => return Ok(Err(Stop::Transport)),
            };
            if is_protocol_nack(&frame) {
                return Ok(Err(Stop::Protocol));
            }
            match frame {
                Frame::Ack { key } => {
                    outstanding.remove(&key);
                    if queue.get(&key).is_some() && queue.mark_acked(&key)? {
                        report.acked += 1;
                    }
                }
                Frame::Nack { key, .. } if outstanding.remove(&key) => {
                    fail(queue, &key, &mut failures, cfg, rng, m.t.now_ms())?;
                }
                _ => {}
            }
        }
        let now = m.t.now_ms();
        for key in outstanding {
            fail(queue, &key, &mut failures, cfg, rng, now)?;
        }
    }
}

fn fail<S: Storage>(
    queue: &mut Queue<S>,
    key: &ItemKey,
    failures: &mut HashMap<ItemKey, u32>,
    cfg: &SyncConfig,
    rng: &mut SplitMix64,
    now: u64,
) -> Result<(), QueueError> {
    let attempts = queue.get(key).map_or(0, |i| i.attempts);
    let delay = cfg.backoff.delay_ms(attempts + 1, rng);
    queue.mark_failed(key, now + delay)?;
    *failures.entry(*key).or_default() += 1;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum StatusError {
    #[error("no status response before the timeout")]
    Timeout,
    #[error("transport failed: {0}")]
    Transport(#[from] TransportError),
    #[error("server rejected the request as a protocol error")]
    Protocol,
}

/// Ask the server for the status of `app_ids`. Ids the server does not
/// know map to `None`.
pub fn status_pull<T: Transport>(
    transport: &mut T,
    app_ids: &[String],
    cfg: &SyncConfig,
) -> Result<BTreeMap<String, Option<Status>>, StatusError> {
    if app_ids.is_empty() {
        return Ok(BTreeMap::new());
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut m = Meter { t: transport, bytes: 0 };
    match handshake(&mut m, cfg, &mut rng) {
        Ok(()) => {}
        Err(Stop::Protocol) => return Err(StatusError::Protocol),
        Err(Stop::Transport) => return Err(StatusError::Timeout),
    }
    let req = Frame::StatusReq {
        app_ids: app_ids.to_vec(),
    };
    for attempt in 0..cfg.hello_attempts {
        if attempt > 0 {
            let wait = cfg.backoff.delay_ms(attempt, &mut rng);
            m.t.sleep_ms(wait);
        }
        m.t.send(&req)?;
        let deadline = m.t.now_ms() + cfg.response_timeout_ms;
        loop {
            let left = deadline.saturating_sub(m.t.now_ms());
            match m.t.recv(left)? {
                Some(Frame::StatusResp { entries }) => {
                    let _ = m.t.send(&Frame::Bye);
                    return Ok(entries.into_iter().collect());
                }
                Some(f) if is_protocol_nack(&f) => return Err(StatusError::Protocol),
                Some(_) => continue,
                None => break,
            }
        }
    }
    Err(StatusError::Timeout)
}
