//! Loan application records: need details, attached KYC documents and the
//! status lifecycle reported back to the field agent.
//!
//! Records are values; every operation returns a new record.

use std::collections::BTreeSet;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::hash::is_digest_hex;
use crate::imaging::CompressedDoc;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("cannot attach documents to a {0} application")]
    State(Status),
    #[error("document with digest {0} is already attached")]
    DuplicateDocument(String),
    #[error("illegal status transition {from} -> {to}")]
    Transition { from: Status, to: Status },
    #[error("manifest parse error: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Draft,
    Submitted,
    UnderReview,
    Approved,
    Rejected,
}

impl Status {
    pub const ALL: [Status; 5] = [
        Status::Draft,
        Status::Submitted,
        Status::UnderReview,
        Status::Approved,
        Status::Rejected,
    ];

    /// The lifecycle edges: Draft→Submitted→UnderReview→{Approved, Rejected}.
    pub fn can_transition_to(self, next: Status) -> bool {
        use Status::*;
        matches!(
            (self, next),
            (Draft, Submitted) | (Submitted, UnderReview) | (UnderReview, Approved) | (UnderReview, Rejected)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Approved | Status::Rejected)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Draft => "Draft",
            Status::Submitted => "Submitted",
            Status::UnderReview => "UnderReview",
            Status::Approved => "Approved",
            Status::Rejected => "Rejected",
        }
    }

    /// Wire code used in status responses.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Status {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| RecordError::Manifest(format!("unknown status {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocumentKind {
    IdentityProof,
    AddressProof,
    IncomeProof,
    Other,
}

impl std::str::FromStr for DocumentKind {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity-proof" => Ok(Self::IdentityProof),
            "address-proof" => Ok(Self::AddressProof),
            "income-proof" => Ok(Self::IncomeProof),
            "other" => Ok(Self::Other),
            _ => Err(RecordError::Validation(format!("unknown document kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub doc_id: String,
    pub kind: DocumentKind,
    /// Lowercase hex SHA-256 of the FSQ1 bytes.
    pub digest: String,
    pub size_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationRecord {
    pub app_id: String,
    pub customer_name: String,
    pub region_id: String,
    /// Requested amount in minor currency units.
    pub need_amount: u64,
    pub need_details: String,
    pub documents: Vec<DocumentRef>,
    pub status: Status,
    /// Milliseconds since the Unix epoch.
    pub updated_at: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl ApplicationRecord {
    /// A new Draft application with a random v4 UUID.
    pub fn new(
        customer_name: &str,
        region_id: &str,
        need_amount: u64,
        need_details: &str,
    ) -> Result<Self, RecordError> {
        Self::with_id(
            uuid::Uuid::new_v4().to_string(),
            customer_name,
            region_id,
            need_amount,
            need_details,
            now_ms(),
        )
    }

    /// Like [`Self::new`] with a caller-chosen id and clock, for reproducible runs.
    pub fn with_id(
        app_id: String,
        customer_name: &str,
        region_id: &str,
        need_amount: u64,
        need_details: &str,
        now_ms: u64,
    ) -> Result<Self, RecordError> {
        let rec = Self {
            app_id,
            customer_name: customer_name.to_owned(),
            region_id: region_id.to_owned(),
            need_amount,
            need_details: need_details.to_owned(),
            documents: Vec::new(),
            status: Status::Draft,
            updated_at: now_ms,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        let fail = |m: &str| Err(RecordError::Validation(m.to_owned()));
        if uuid::Uuid::parse_str(&self.app_id).is_err() {
            return fail("app_id must be a UUID");
        }
        if self.customer_name.trim().is_empty() {
            return fail("customer_name is empty");
        }
        if self.region_id.trim().is_empty() {
            return fail("region_id is empty");
        }
        if self.need_amount == 0 {
            return fail("need_amount must be positive");
        }
        let mut ids = BTreeSet::new();
        for d in &self.documents {
            if !ids.insert(d.doc_id.as_str()) {
                return Err(RecordError::Validation(format!("duplicate doc_id {}", d.doc_id)));
            }
            if d.doc_id.is_empty() {
                return fail("empty doc_id");
            }
            if !is_digest_hex(&d.digest) {
                return Err(RecordError::Validation(format!("bad digest for {}", d.doc_id)));
            }
            if d.size_bytes == 0 {
                return fail("document size_bytes must be positive");
            }
        }
        Ok(())
    }

    pub fn attach_document(&self, kind: DocumentKind, doc: &CompressedDoc) -> Result<Self, RecordError> {
        self.attach_document_ref(
            DocumentRef {
                doc_id: uuid::Uuid::new_v4().to_string(),
                kind,
                digest: doc.digest().to_owned(),
                size_bytes: doc.len() as u64,
            },
            now_ms(),
        )
    }

    /// Attach an already-described document. Allowed while Draft or Submitted.
    pub fn attach_document_ref(&self, doc: DocumentRef, now_ms: u64) -> Result<Self, RecordError> {
        if !matches!(self.status, Status::Draft | Status::Submitted) {
            return Err(RecordError::State(self.status));
        }
        if self.documents.iter().any(|d| d.digest == doc.digest) {
            return Err(RecordError::DuplicateDocument(doc.digest));
        }
        let mut next = self.clone();
        next.documents.push(doc);
        next.updated_at = now_ms.max(self.updated_at);
        next.validate()?;
        Ok(next)
    }

    pub fn transition(&self, next: Status) -> Result<Self, RecordError> {
        self.transition_at(next, now_ms())
    }

    pub fn transition_at(&self, next: Status, now_ms: u64) -> Result<Self, RecordError> {
        if !self.status.can_transition_to(next) {
            return Err(RecordError::Transition {
                from: self.status,
                to: next,
            });
        }
        let mut rec = self.clone();
        rec.status = next;
        rec.updated_at = now_ms.max(self.updated_at);
        Ok(rec)
    }

    /// Canonical JSON: sorted keys, compact, UTF-8.
    pub fn to_manifest(&self) -> Vec<u8> {
        // serde_json's default map is ordered, so going through `Value` sorts keys.
        let value = serde_json::to_value(self).expect("record serializes");
        serde_json::to_vec(&value).expect("value serializes")
    }

    pub fn from_manifest(octets: &[u8]) -> Result<Self, RecordError> {
        let rec: Self = serde_json::from_slice(octets).map_err(|e| RecordError::Manifest(e.to_string()))?;
        rec.validate()?;
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{encode_fsq1, Image};
    use proptest::prelude::*;

    fn sample() -> ApplicationRecord {
        ApplicationRecord::new("Asha", "WB-01", 50_000, "loan for loom").unwrap()
    }

    fn doc(fill: u8) -> CompressedDoc {
        encode_fsq1(&Image::filled(4, 4, fill).unwrap(), 0.6).unwrap()
    }

    #[test]
    fn new_application_is_draft() {
        let r = sample();
        assert_eq!(r.status, Status::Draft);
        assert!(r.documents.is_empty());
        assert_ne!(sample().app_id, r.app_id);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            ApplicationRecord::new("Asha", "WB-01", 0, "x"),
            Err(RecordError::Validation(_))
        ));
        assert!(ApplicationRecord::new(" ", "WB-01", 1, "x").is_err());
        assert!(ApplicationRecord::new("Asha", "", 1, "x").is_err());
    }

    #[test]
    fn attach_rules() {
        let r = sample().attach_document(DocumentKind::IdentityProof, &doc(1)).unwrap();
        assert_eq!(r.documents.len(), 1);
        assert_eq!(r.documents[0].digest, doc(1).digest());
        assert!(matches!(
            r.attach_document(DocumentKind::AddressProof, &doc(1)),
            Err(RecordError::DuplicateDocument(_))
        ));
        let submitted = r.transition(Status::Submitted).unwrap();
        assert!(submitted.attach_document(DocumentKind::IncomeProof, &doc(128)).is_ok());
        let approved = submitted
            .transition(Status::UnderReview)
            .and_then(|r| r.transition(Status::Approved))
            .unwrap();
        assert_eq!(
            approved.attach_document(DocumentKind::Other, &doc(200)),
            Err(RecordError::State(Status::Approved))
        );
    }

    #[test]
    fn transitions() {
        let r = sample();
        assert_eq!(r.transition(Status::Submitted).unwrap().status, Status::Submitted);
        let under = r
            .transition(Status::Submitted)
            .and_then(|r| r.transition(Status::UnderReview))
            .unwrap();
        assert_eq!(under.transition(Status::Rejected).unwrap().status, Status::Rejected);
        let approved = under.transition(Status::Approved).unwrap();
        let err = approved.transition(Status::Draft).unwrap_err();
        assert_eq!(err.to_string(), "illegal status transition Approved -> Draft");
    }

    #[test]
    fn manifest_round_trip_is_canonical() {
        let r = sample().attach_document(DocumentKind::IncomeProof, &doc(9)).unwrap();
        let m = r.to_manifest();
        assert_eq!(m, r.to_manifest());
        assert_eq!(ApplicationRecord::from_manifest(&m).unwrap(), r);
        let text = String::from_utf8(m).unwrap();
        assert!(!text.contains(' ') || text.contains("loan for loom"));
        let keys: Vec<usize> = [
            "\"app_id\"",
            "\"customer_name\"",
            "\"documents\"",
            "\"need_amount\"",
            "\"need_details\"",
            "\"region_id\"",
            "\"status\"",
            "\"updated_at\"",
        ]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "{text}");
        assert!(text.contains("\"kind\":\"income-proof\""));
    }

    #[test]
    fn manifest_rejects_unknown_status_and_missing_fields() {
        let text = String::from_utf8(sample().to_manifest()).unwrap();
        let bad = text.replace("\"Draft\"", "\"Pending\"");
        assert!(matches!(
            ApplicationRecord::from_manifest(bad.as_bytes()),
            Err(RecordError::Manifest(_))
        ));
        let missing = br#"{"app_id":"x"}"#;
        assert!(matches!(
            ApplicationRecord::from_manifest(missing),
            Err(RecordError::Manifest(_))
        ));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Transition(usize),
        Attach(u8),
    }

    proptest! {
        #[test]
        fn lifecycle_only_follows_defined_edges(ops in proptest::collection::vec(
            prop_oneof![(0usize..5).prop_map(Op::Transition), any::<u8>().prop_map(Op::Attach)], 0..40)) {
            let mut rec = sample();
            for op in ops {
                let before = rec.status;
                let next = match op {
                    Op::Transition(i) => rec.transition(Status::ALL[i]),
                    Op::Attach(b) => rec.attach_document(DocumentKind::Other, &doc(b)),
                };
                if let Ok(next) = next {
                    prop_assert!(next.status == before || before.can_transition_to(next.status));
                    rec = next;
                }
            }
        }

        #[test]
        fn manifest_round_trip(name in "[a-zA-Z ]{1,12}\\S", details in ".{0,40}", amount in 1u64..u64::MAX) {
            let r = ApplicationRecord::new(&name, "R1", amount, &details).unwrap();
            prop_assert_eq!(ApplicationRecord::from_manifest(&r.to_manifest()).unwrap(), r);
        }
    }
}
