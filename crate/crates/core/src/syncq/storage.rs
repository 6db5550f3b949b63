//! Where a queue keeps its journal and payload blobs.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub trait Storage {
    fn read_journal(&mut self) -> io::Result<Vec<u8>>;
    fn truncate_journal(&mut self, len: u64) -> io::Result<()>;
    /// Append one encoded entry; durable once this returns `Ok`.
    fn append_journal(&mut self, entry: &[u8]) -> io::Result<()>;
    /// Store a blob atomically and durably. Existing blobs are left alone.
    fn put_blob(&mut self, name: &str, bytes: &[u8]) -> io::Result<()>;
    fn get_blob(&self, name: &str) -> io::Result<Vec<u8>>;
    fn lock_session(&mut self) -> io::Result<()>;
    fn unlock_session(&mut self);
}

const JOURNAL: &str = "queue.journal";
const BLOBS: &str = "blobs";
const LOCK: &str = "sync.lock";

/// A queue directory: `queue.journal`, `blobs/<digest>`, and `sync.lock`
/// while a session runs.
#[derive(Debug)]
pub struct DirStorage {
    dir: PathBuf,
    journal: File,
    locked: bool,
}

impl DirStorage {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(BLOBS))?;
        let journal = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(dir.join(JOURNAL))?;
        Ok(Self {
            dir,
            journal,
            locked: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn process_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

/// Write `bytes` to `path` through a temp file, fsync, rename, fsync the directory.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        File::open(parent)?.sync_all()?;
    }
    Ok(())
}

impl Storage for DirStorage {
    fn read_journal(&mut self) -> io::Result<Vec<u8>> {
        let mut out = Vec::new();
        self.journal.seek(SeekFrom::Start(0))?;
        self.journal.read_to_end(&mut out)?;
        Ok(out)
    }

    fn truncate_journal(&mut self, len: u64) -> io::Result<()> {
        self.journal.set_len(len)?;
        self.journal.sync_all()
    }

    fn append_journal(&mut self, entry: &[u8]) -> io::Result<()> {
        self.journal.write_all(entry)?;
        self.journal.sync_data()
    }

    fn put_blob(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.dir.join(BLOBS).join(name);
        if path.exists() {
            return Ok(());
        }
        write_atomic(&path, bytes)
    }

    fn get_blob(&self, name: &str) -> io::Result<Vec<u8>> {
        fs::read(self.dir.join(BLOBS).join(name))
    }

    fn lock_session(&mut self) -> io::Result<()> {
        let path = self.dir.join(LOCK);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id())?;
                    self.locked = true;
                    return Ok(());
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse().ok());
                    match holder {
                        Some(pid) if process_alive(pid) => {
                            return Err(io::Error::new(
                                io::ErrorKind::WouldBlock,
                                format!("sync session already running (pid {pid})"),
                            ))
                        }
                        // Stale lock from a dead process.
                        _ => fs::remove_file(&path)?,
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(io::Error::other("could not acquire sync lock"))
    }

    fn unlock_session(&mut self) {
        if self.locked {
            let _ = fs::remove_file(self.dir.join(LOCK));
            self.locked = false;
        }
    }
}

impl Drop for DirStorage {
    fn drop(&mut self) {
        self.unlock_session();
    }
}

/// Volatile storage for simulations and tests. Cloning snapshots it.
#[derive(Clone, Debug, Default)]
pub struct MemStorage {
    pub journal: Vec<u8>,
    pub blobs: HashMap<String, Arc<Vec<u8>>>,
    locked: bool,
}

impl Storage for MemStorage {
    fn read_journal(&mut self) -> io::Result<Vec<u8>> {
        Ok(self.journal.clone())
    }

    fn truncate_journal(&mut self, len: u64) -> io::Result<()> {
        self.journal.truncate(len as usize);
        Ok(())
    }

    fn append_journal(&mut self, entry: &[u8]) -> io::Result<()> {
        self.journal.extend_from_slice(entry);
        Ok(())
    }

    fn put_blob(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        self.blobs
            .entry(name.to_owned())
            .or_insert_with(|| Arc::new(bytes.to_vec()));
        Ok(())
    }

    fn get_blob(&self, name: &str) -> io::Result<Vec<u8>> {
        self.blobs
            .get(name)
            .map(|b| b.as_ref().clone())
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, name.to_owned()))
    }

    fn lock_session(&mut self) -> io::Result<()> {
        if self.locked {
            return Err(io::Error::new(io::ErrorKind::WouldBlock, "session already running"));
        }
        self.locked = true;
        Ok(())
    }

    fn unlock_session(&mut self) {
        self.locked = false;
    }
}

/// Wraps a storage and "crashes" once a budget of written bytes is spent.
///
/// The journal append that exhausts the budget is cut short at the exact
/// byte, like a process killed mid-`write`; a blob write that does not fit is
/// dropped whole, since blobs are published by rename. After the crash every
/// mutating call fails.
#[derive(Debug)]
pub struct FaultyStorage<S> {
    inner: S,
    budget: u64,
    crashed: bool,
}

impl<S: Storage> FaultyStorage<S> {
    pub fn new(inner: S, budget: u64) -> Self {
        Self {
            inner,
            budget,
            crashed: false,
        }
    }

    pub fn crashed(&self) -> bool {
        self.crashed
    }

    pub fn into_inner(self) -> S {
        self.inner
    }

    fn crash() -> io::Error {
        io::Error::other("injected crash")
    }
}

impl<S: Storage> Storage for FaultyStorage<S> {
    fn read_journal(&mut self) -> io::Result<Vec<u8>> {
        self.inner.read_journal()
    }

    fn truncate_journal(&mut self, len: u64) -> io::Result<()> {
        if self.crashed {
            return Err(Self::crash());
        }
        self.inner.truncate_journal(len)
    }

    fn append_journal(&mut self, entry: &[u8]) -> io::Result<()> {
        if self.crashed {
            return Err(Self::crash());
        }
        if (entry.len() as u64) > self.budget {
            let cut = self.budget as usize;
            self.inner.append_journal(&entry[..cut])?;
            self.budget = 0;
            self.crashed = true;
            return Err(Self::crash());
        }
        self.budget -= entry.len() as u64;
        self.inner.append_journal(entry)
    }

    fn put_blob(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        if self.crashed {
            return Err(Self::crash());
        }
        if (bytes.len() as u64) > self.budget {
            self.budget = 0;
            self.crashed = true;
            return Err(Self::crash());
        }
        self.budget -= bytes.len() as u64;
        self.inner.put_blob(name, bytes)
    }

    fn get_blob(&self, name: &str) -> io::Result<Vec<u8>> {
        self.inner.get_blob(name)
    }

    fn lock_session(&mut self) -> io::Result<()> {
        self.inner.lock_session()
    }

    fn unlock_session(&mut self) {
        self.inner.unlock_session()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = DirStorage::open(dir.path()).unwrap();
        let mut b = DirStorage::open(dir.path()).unwrap();
        a.lock_session().unwrap();
        assert_eq!(b.lock_session().unwrap_err().kind(), io::ErrorKind::WouldBlock);
        a.unlock_session();
        b.lock_session().unwrap();
    }

    #[test]
    fn stale_lock_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join(BLOBS)).unwrap();
        // pid_max on Linux is at most 2^22, so this pid cannot be live.
        fs::write(dir.path().join(LOCK), "999999999").unwrap();
        let mut s = DirStorage::open(dir.path()).unwrap();
        s.lock_session().unwrap();
    }

    #[test]
    fn faulty_storage_cuts_journal_at_budget() {
        let mut f = FaultyStorage::new(MemStorage::default(), 5);
        f.append_journal(b"abc").unwrap();
        assert!(f.append_journal(b"defg").is_err());
        assert!(f.crashed());
        assert!(f.append_journal(b"x").is_err());
        assert_eq!(f.into_inner().journal, b"abcde");
    }

    #[test]
    fn blobs_are_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = DirStorage::open(dir.path()).unwrap();
        s.put_blob("x", b"one").unwrap();
        s.put_blob("x", b"two").unwrap();
        assert_eq!(s.get_blob("x").unwrap(), b"one");
        assert!(s.get_blob("missing").is_err());
    }
}
