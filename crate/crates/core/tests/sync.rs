mod common;

use std::sync::Arc;

use common::{app_id, application, bytes};
use fieldsync::middleware::{CoreStub, Middleware};
use fieldsync::records::Status;
use fieldsync::syncq::{
    status_pull, sync_session, ItemState, MemStorage, Outbound, Queue, SessionOutcome, StatusError, SyncConfig,
    SyncError,
};
use fieldsync::transport::{DropOnceLink, LossyLink, MemTransport, PerfectLink};
use fieldsync::wire::{Frame, FrameHandler, Reply};

fn mem_queue() -> Queue<MemStorage> {
    Queue::recover(MemStorage::default()).unwrap()
}

fn enqueue_apps(q: &mut Queue<MemStorage>, apps: &[(u64, &[usize])]) -> usize {
    let mut n = 0;
    for &(id, sizes) in apps {
        let (rec, docs) = application(id, sizes);
        let docs: Vec<&[u8]> = docs.iter().map(Vec::as_slice).collect();
        n += q.enqueue_application(&rec, &docs, 0).unwrap().len();
    }
    n
}

#[test]
fn lossless_three_items() {
    let mw = Arc::new(Middleware::in_memory());
    let mut q = mem_queue();
    assert_eq!(enqueue_apps(&mut q, &[(1, &[]), (2, &[5000])]), 3);
    let mut t = MemTransport::new(mw.session(), PerfectLink);
    let report = sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    assert_eq!((report.sent, report.acked, report.retried), (3, 3, 0));
    assert_eq!(report.outcome, SessionOutcome::Completed);
    assert!(report.bytes_sent > 5000);
    assert_eq!(q.pending_count(), 0);
    assert_eq!(mw.applied_mutations(), 3);
}

#[test]
fn drop_once_link_needs_a_retry_per_item() {
    let mw = Arc::new(Middleware::in_memory());
    let mut q = mem_queue();
    let n = enqueue_apps(&mut q, &[(1, &[3000, 9000]), (2, &[]), (3, &[100])]) as u64;
    let mut t = MemTransport::new(mw.session(), DropOnceLink::default());
    let report = sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    assert_eq!(report.outcome, SessionOutcome::Completed);
    assert_eq!(report.acked, n);
    assert!(report.retried >= n, "retried {} < {n}", report.retried);
    assert!(q.items().iter().all(|i| i.state == ItemState::Acked && i.attempts >= 1));
    assert_eq!(mw.applied_mutations(), n);
}

/// Answers HELLO, then NACKs every item with a fixed reason.
struct Naysayer(&'static str);

impl FrameHandler for Naysayer {
    fn handle(&mut self, frame: Frame, _now: u64) -> Reply {
        match frame {
            Frame::Hello { .. } => Reply::one(frame),
            Frame::PutRecord { key, .. } | Frame::DocDone { key, .. } => Reply::one(Frame::Nack {
                key,
                reason: self.0.into(),
            }),
            _ => Reply::none(),
        }
    }
}

#[test]
fn nack_leaves_item_pending_with_attempt_counted() {
    let mut q = mem_queue();
    let key = q
        .enqueue_at(
            Outbound::Document {
                app_id: app_id(1),
                doc_id: "d".into(),
            },
            b"scan",
            0,
        )
        .unwrap();
    let cfg = SyncConfig {
        max_attempts_per_session: 1,
        ..SyncConfig::default()
    };
    let mut t = MemTransport::new(Naysayer("bad-digest"), PerfectLink);
    let report = sync_session(&mut q, &mut t, &cfg).unwrap();
    assert_eq!((report.sent, report.acked), (1, 0));
    let item = q.get(&key).unwrap();
    assert_eq!(item.state, ItemState::Pending);
    assert_eq!(item.attempts, 1);
    assert!(item.not_before_ms <= 500 + 1, "first backoff is at most the base delay");
}

#[test]
fn protocol_nack_aborts_without_counting_attempts() {
    let mut q = mem_queue();
    enqueue_apps(&mut q, &[(1, &[])]);
    let mut t = MemTransport::new(Naysayer("protocol"), PerfectLink);
    let report = sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    assert_eq!(report.outcome, SessionOutcome::ProtocolViolation);
    assert!(q
        .items()
        .iter()
        .all(|i| i.state == ItemState::Pending && i.attempts == 0));
}

/// Forwards to a real session but hangs up after `left` frames.
struct HangsUp {
    inner: fieldsync::middleware::Session,
    left: usize,
}

impl FrameHandler for HangsUp {
    fn handle(&mut self, frame: Frame, now: u64) -> Reply {
        if self.left == 0 {
            return Reply {
                frames: vec![],
                close: true,
            };
        }
        self.left -= 1;
        self.inner.handle(frame, now)
    }
}

#[test]
fn transport_failure_returns_partial_report() {
    let mw = Arc::new(Middleware::in_memory());
    let mut q = mem_queue();
    enqueue_apps(&mut q, &[(1, &[]), (2, &[]), (3, &[]), (4, &[])]);
    let cfg = SyncConfig {
        batch: 1,
        ..SyncConfig::default()
    };
    let handler = HangsUp {
        inner: mw.session(),
        left: 3,
    };
    let mut t = MemTransport::new(handler, PerfectLink);
    let report = sync_session(&mut q, &mut t, &cfg).unwrap();
    assert_eq!(report.outcome, SessionOutcome::TransportFailure);
    assert_eq!(report.acked, 2);
    assert_eq!(q.pending_count(), 2);
    assert!(q.pending().all(|i| i.attempts <= 1));
}

#[test]
fn handshake_without_server_fails_cleanly() {
    struct Silent;
    impl FrameHandler for Silent {
        fn handle(&mut self, _: Frame, _: u64) -> Reply {
            Reply::none()
        }
    }
    let mut q = mem_queue();
    enqueue_apps(&mut q, &[(1, &[])]);
    let mut t = MemTransport::new(Silent, PerfectLink);
    let report = sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    assert_eq!(report.outcome, SessionOutcome::TransportFailure);
    assert_eq!(report.sent, 0);
    assert_eq!(q.pending_count(), 1);
    assert!(matches!(
        status_pull(&mut t, &[app_id(1)], &SyncConfig::default()),
        Err(StatusError::Timeout)
    ));
}

#[test]
fn chunk_reassembly_for_every_chunk_size() {
    let payload = bytes(9, 257);
    for chunk_size in 1..=payload.len() + 1 {
        let mw = Arc::new(Middleware::in_memory());
        let mut q = mem_queue();
        q.enqueue_at(
            Outbound::Document {
                app_id: app_id(1),
                doc_id: "d".into(),
            },
            &payload,
            0,
        )
        .unwrap();
        let cfg = SyncConfig {
            chunk_size,
            ..SyncConfig::default()
        };
        let mut t = MemTransport::new(mw.session(), PerfectLink);
        let report = sync_session(&mut q, &mut t, &cfg).unwrap();
        assert_eq!(report.acked, 1, "chunk size {chunk_size}");
        let digest = fieldsync::hash::sha256_hex(&payload);
        assert_eq!(mw.blob(&digest).unwrap().as_slice(), payload.as_slice());
    }
}

#[test]
fn replayed_deliveries_apply_once() {
    for replay in [2, 3, 5] {
        let mw = Arc::new(Middleware::in_memory());
        let mut q = mem_queue();
        let n = enqueue_apps(&mut q, &[(1, &[700, 5000]), (2, &[10]), (3, &[])]) as u64;
        let mut t = MemTransport::new(mw.session(), DropOnceLink::default()).replaying(replay);
        let report = sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
        assert_eq!(report.acked, n);
        assert_eq!(mw.applied_mutations(), n);
        assert_eq!(mw.applied_keys().len() as u64, n);
        mw.check_invariants().unwrap();
    }
}

#[test]
fn lossy_link_converges_over_sessions() {
    let mw = Arc::new(Middleware::in_memory());
    let mut q = mem_queue();
    let n = enqueue_apps(&mut q, &[(1, &[9000]), (2, &[100, 200]), (3, &[])]) as u64;
    let mut t = MemTransport::new(mw.session(), LossyLink::new(0.3, 7));
    let mut sessions = 0;
    while q.pending_count() > 0 {
        sessions += 1;
        assert!(sessions < 100, "no convergence");
        t.reconnect(mw.session());
        let cfg = SyncConfig {
            seed: sessions,
            ..SyncConfig::default()
        };
        sync_session(&mut q, &mut t, &cfg).unwrap();
    }
    assert_eq!(mw.applied_mutations(), n);
}

#[test]
fn status_pull_reports_decisions_and_unknowns() {
    let mw = Arc::new(Middleware::in_memory());
    let mut q = mem_queue();
    enqueue_apps(&mut q, &[(1, &[64])]);
    let mut t = MemTransport::new(mw.session(), PerfectLink);
    sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    let mut core = CoreStub::new();
    mw.forward_to_core(&mut core).unwrap();
    mw.core_decide(&mut core).unwrap();

    t.reconnect(mw.session());
    let ids = vec![app_id(1), app_id(99)];
    let got = status_pull(&mut t, &ids, &SyncConfig::default()).unwrap();
    assert_eq!(got[&app_id(1)], Some(CoreStub::decision_for(&app_id(1))));
    assert_eq!(got[&app_id(99)], None);
    assert!(status_pull(&mut t, &[], &SyncConfig::default()).unwrap().is_empty());
    assert_eq!(
        mw.record(&app_id(1)).unwrap().status,
        got[&app_id(1)].unwrap(),
        "client sees the store's status"
    );
    assert!(matches!(got[&app_id(1)], Some(Status::Approved | Status::Rejected)));
}

#[test]
fn concurrent_sessions_on_one_queue_dir_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = Queue::open(dir.path()).unwrap();
    a.enqueue(Outbound::Record { app_id: app_id(1) }, b"m").unwrap();
    let mut b = Queue::open(dir.path()).unwrap();
    // Hold the lock the way a running session would.
    std::fs::write(dir.path().join("sync.lock"), std::process::id().to_string()).unwrap();
    let mw = Arc::new(Middleware::in_memory());
    let mut t = MemTransport::new(mw.session(), PerfectLink);
    assert!(matches!(
        sync_session(&mut b, &mut t, &SyncConfig::default()),
        Err(SyncError::Locked(_))
    ));
    std::fs::remove_file(dir.path().join("sync.lock")).unwrap();
    sync_session(&mut b, &mut t, &SyncConfig::default()).unwrap();
}
