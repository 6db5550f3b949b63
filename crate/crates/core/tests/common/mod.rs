#![allow(dead_code)]

use fieldsync::hash::sha256_hex;
use fieldsync::records::{ApplicationRecord, DocumentKind, DocumentRef};
use fieldsync::rng::SplitMix64;

pub fn app_id(n: u64) -> String {
    let mut r = SplitMix64::new(n);
    let (a, b) = (r.next_u64(), r.next_u64());
    format!(
        "{:08x}-{:04x}-4{:03x}-8{:03x}-{:012x}",
        a >> 32,
        (a >> 16) & 0xffff,
        a & 0xfff,
        b >> 52,
        b & 0xffff_ffff_ffff
    )
}

pub fn bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut r = SplitMix64::new(seed);
    (0..len).map(|_| r.next_u64() as u8).collect()
}

/// A Draft application with `doc_sizes.len()` documents of random bytes.
pub fn application(n: u64, doc_sizes: &[usize]) -> (ApplicationRecord, Vec<Vec<u8>>) {
    let mut rec =
        ApplicationRecord::with_id(app_id(n), "Customer", "R1", 10_000 + n, "working capital", 1_000).unwrap();
    let mut docs = Vec::new();
    for (i, &size) in doc_sizes.iter().enumerate() {
        let payload = bytes(n * 1_000 + i as u64, size);
        rec = rec
            .attach_document_ref(
                DocumentRef {
                    doc_id: format!("{}-doc{i}", rec.app_id),
                    kind: DocumentKind::IdentityProof,
                    digest: sha256_hex(&payload),
                    size_bytes: size as u64,
                },
                1_000,
            )
            .unwrap();
        docs.push(payload);
    }
    (rec, docs)
}
