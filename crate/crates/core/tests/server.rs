mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::{app_id, application};
use fieldsync::middleware::{serve, CoreStub, Middleware, ServeOptions};
use fieldsync::records::Status;
use fieldsync::syncq::{status_pull, sync_session, MemStorage, Queue, SessionOutcome, SyncConfig};
use fieldsync::transport::{MemTransport, PerfectLink, TcpTransport};
use fieldsync::wire::{Frame, ItemKey};

const TIMEOUT: Duration = Duration::from_secs(5);

fn queue_for(ids: std::ops::Range<u64>) -> (Queue<MemStorage>, u64) {
    let mut q = Queue::recover(MemStorage::default()).unwrap();
    let mut n = 0;
    for id in ids {
        let (rec, docs) = application(id, &[2000 + id as usize * 10, 50]);
        let docs: Vec<&[u8]> = docs.iter().map(Vec::as_slice).collect();
        n += q.enqueue_application(&rec, &docs, 0).unwrap().len() as u64;
    }
    (q, n)
}

fn no_core() -> ServeOptions {
    ServeOptions { core_interval: None }
}

#[test]
fn one_client_over_tcp() {
    let mw = Arc::new(Middleware::in_memory());
    let server = serve("127.0.0.1:0", Arc::clone(&mw), CoreStub::new(), no_core()).unwrap();
    let mut q = Queue::recover(MemStorage::default()).unwrap();
    for id in 0..5u64 {
        q.enqueue(
            fieldsync::syncq::Outbound::Record { app_id: app_id(id) },
            &application(id, &[]).0.to_manifest(),
        )
        .unwrap();
    }
    let mut t = TcpTransport::connect(server.local_addr(), TIMEOUT).unwrap();
    let report = sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    assert_eq!(report.outcome, SessionOutcome::Completed);
    assert_eq!(report.acked, 5);
    server.shutdown();
    assert_eq!(mw.applied_keys().len(), 5);
}

#[test]
fn concurrent_clients_match_serial_execution() {
    let mw = Arc::new(Middleware::in_memory());
    let server = serve("127.0.0.1:0", Arc::clone(&mw), CoreStub::new(), no_core()).unwrap();
    let addr = server.local_addr();
    let workers: Vec<_> = [0..6u64, 6..12]
        .into_iter()
        .map(|ids| {
            thread::spawn(move || {
                let (mut q, n) = queue_for(ids);
                let mut t = TcpTransport::connect(addr, TIMEOUT).unwrap();
                let cfg = SyncConfig {
                    chunk_size: 512,
                    ..SyncConfig::default()
                };
                let r = sync_session(&mut q, &mut t, &cfg).unwrap();
                assert_eq!(r.acked, n);
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    server.shutdown();

    // Oracle: the same two workloads applied one after the other in memory.
    let serial = Arc::new(Middleware::in_memory());
    for ids in [0..6u64, 6..12] {
        let (mut q, _) = queue_for(ids);
        let mut t = MemTransport::new(serial.session(), PerfectLink);
        sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    }
    assert_eq!(mw.applied_keys(), serial.applied_keys());
    let strip = |m: &Middleware| {
        m.records()
            .into_iter()
            .map(|r| (r.app_id, r.status, r.documents))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&mw), strip(&serial));
    for rec in serial.records() {
        for d in rec.documents {
            assert_eq!(mw.blob(&d.digest), serial.blob(&d.digest));
        }
    }
    mw.check_invariants().unwrap();
}

#[test]
fn restart_from_persisted_store() {
    let dir = tempfile::tempdir().unwrap();
    let (mut q, n) = queue_for(0..3);
    {
        let mw = Arc::new(Middleware::open(dir.path()).unwrap());
        let server = serve("127.0.0.1:0", Arc::clone(&mw), CoreStub::new(), no_core()).unwrap();
        let mut t = TcpTransport::connect(server.local_addr(), TIMEOUT).unwrap();
        assert_eq!(sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap().acked, n);
        // No graceful shutdown: the handle is leaked and the store dropped
        // with the server thread still holding it.
        std::mem::forget(server);
    }
    let mw = Middleware::open(dir.path()).unwrap();
    assert_eq!(mw.applied_keys().len() as u64, n);
    assert_eq!(mw.records().len(), 3);
    assert!(mw.records().iter().all(|r| r.status == Status::Submitted));
    mw.check_invariants().unwrap();
}

#[test]
fn core_tick_decides_and_clients_see_it() {
    let mw = Arc::new(Middleware::in_memory());
    let opts = ServeOptions {
        core_interval: Some(Duration::from_millis(20)),
    };
    let server = serve("127.0.0.1:0", Arc::clone(&mw), CoreStub::new(), opts).unwrap();
    let (mut q, _) = queue_for(0..2);
    let mut t = TcpTransport::connect(server.local_addr(), TIMEOUT).unwrap();
    sync_session(&mut q, &mut t, &SyncConfig::default()).unwrap();
    let ids = vec![app_id(0), app_id(1)];
    let mut statuses = Default::default();
    for _ in 0..100 {
        let mut t = TcpTransport::connect(server.local_addr(), TIMEOUT).unwrap();
        statuses = status_pull(&mut t, &ids, &SyncConfig::default()).unwrap();
        if statuses
            .values()
            .all(|s: &Option<Status>| s.is_some_and(Status::is_terminal))
        {
            break;
        }
        thread::sleep(Duration::from_millis(20));
    }
    for id in &ids {
        assert_eq!(statuses[id], Some(CoreStub::decision_for(id)));
    }
    let core = server.core();
    assert_eq!(core.lock().unwrap().received().len(), 4);
}

#[test]
fn garbage_bytes_get_protocol_nack_and_close() {
    let server = serve(
        "127.0.0.1:0",
        Arc::new(Middleware::in_memory()),
        CoreStub::new(),
        no_core(),
    )
    .unwrap();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    s.set_read_timeout(Some(TIMEOUT)).unwrap();
    s.write_all(&[1, 0, 0, 0, 0x7f, 0]).unwrap();
    let mut out = Vec::new();
    s.read_to_end(&mut out).unwrap();
    assert_eq!(
        Frame::decode(&out).unwrap(),
        Frame::Nack {
            key: ItemKey::ZERO,
            reason: "protocol".into()
        }
    );
}
