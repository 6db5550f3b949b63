//! Device-side store-and-forward: a crash-durable outbound queue and the
//! sync session that drains it to the middleware.
//!
//! On disk a queue directory holds `queue.journal` (length + CRC32 framed
//! entries), `blobs/` (payloads named by their SHA-256) and, while a session
//! runs, `sync.lock`.

mod queue;
mod session;
mod storage;

pub use queue::{item_key, ItemKind, ItemState, Outbound, Queue, QueueError, QueueItem};
pub use session::{
    item_frames, status_pull, sync_session, SessionOutcome, StatusError, SyncConfig, SyncError, SyncReport,
};
pub(crate) use storage::write_atomic;
pub use storage::{DirStorage, FaultyStorage, MemStorage, Storage};
