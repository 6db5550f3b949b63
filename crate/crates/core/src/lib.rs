//! Field data capture toolkit.
//!
//! The crate is organised around the path a captured loan document takes:
//!
//! * [`imaging`] turns a camera capture into a small monochrome FSQ1 container.
//! * [`records`] holds the application record the documents are attached to.
//! * [`syncq`] is the device side: a crash-durable outbound queue and the sync
//!   session that drains it over the [`wire`] protocol.
//! * [`middleware`] is the server side: dedup, persistence, status answers and
//!   the only path to the core-lending stub.
//! * [`netsim`] drives both ends over simulated regional links and evaluates
//!   provider selection.

pub mod backoff;
pub mod hash;
pub mod imaging;
pub mod journal;
pub mod middleware;
pub mod netsim;
pub mod records;
pub mod rng;
pub mod syncq;
pub mod transport;
pub mod wire;

pub use imaging::{CompressedDoc, EdgeMask, Image, PipelineConfig};
pub use middleware::{CoreStub, Middleware};
pub use netsim::{LinkProfile, Scenario, ScenarioReport, Strategy};
pub use records::{ApplicationRecord, DocumentKind, Status};
pub use syncq::{Queue, SyncConfig, SyncReport};
