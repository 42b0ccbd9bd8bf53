//! Content-addressed blob store.
//!
//! A [`Cid`] is the lowercase hex SHA-256 of the stored bytes. Two backends
//! implement [`ContentStore`]: [`MemoryStore`] for tests and simulation, and
//! [`DiskStore`], which keeps one file per blob at `<root>/<first 2 hex>/<cid>`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CasError {
    #[error("invalid cid {0:?}: expected 64 lowercase hex characters")]
    InvalidCid(String),
    #[error("cid {0} not found")]
    NotFound(Cid),
    #[error("storage error: {0}")]
    Storage(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid(String);

impl Cid {
    pub fn of(bytes: &[u8]) -> Self {
        Cid(hex::encode(Sha256::digest(bytes)))
    }

    pub fn parse(s: &str) -> Result<Self, CasError> {
        let ok = s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Cid(s.to_owned()))
        } else {
            Err(CasError::InvalidCid(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First 8 hex characters, for logs.
    pub fn short(&self) -> &str {
        &self.0[..8]
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Cid {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cid::parse(s)
    }
}

pub trait ContentStore: Send + Sync {
    fn put(&self, bytes: &[u8]) -> Result<Cid, CasError>;

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError>;

    fn has(&self, cid: &Cid) -> Result<bool, CasError>;

    /// Number of distinct blobs held.
    fn len(&self) -> Result<usize, CasError>;

    fn is_empty(&self) -> Result<bool, CasError> {
        Ok(self.len()? == 0)
    }

    fn get_hex(&self, cid: &str) -> Result<Vec<u8>, CasError> {
        self.get(&Cid::parse(cid)?)
    }

    fn has_hex(&self, cid: &str) -> Result<bool, CasError> {
        self.has(&Cid::parse(cid)?)
    }
}

impl<S: ContentStore + ?Sized> ContentStore for Arc<S> {
    fn put(&self, bytes: &[u8]) -> Result<Cid, CasError> {
        (**self).put(bytes)
    }
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        (**self).get(cid)
    }
    fn has(&self, cid: &Cid) -> Result<bool, CasError> {
        (**self).has(cid)
    }
    fn len(&self) -> Result<usize, CasError> {
        (**self).len()
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    blobs: RwLock<HashMap<Cid, Arc<[u8]>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ContentStore for MemoryStore {
    fn put(&self, bytes: &[u8]) -> Result<Cid, CasError> {
        let cid = Cid::of(bytes);
        let mut blobs = self.blobs.write().expect("store lock poisoned");
        blobs.entry(cid.clone()).or_insert_with(|| Arc::from(bytes));
        Ok(cid)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        let blobs = self.blobs.read().expect("store lock poisoned");
        blobs.get(cid).map(|b| b.to_vec()).ok_or_else(|| CasError::NotFound(cid.clone()))
    }

    fn has(&self, cid: &Cid) -> Result<bool, CasError> {
        Ok(self.blobs.read().expect("store lock poisoned").contains_key(cid))
    }

    fn len(&self) -> Result<usize, CasError> {
        Ok(self.blobs.read().expect("store lock poisoned").len())
    }
}

#[derive(Debug)]
pub struct DiskStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CasError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, write_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, cid: &Cid) -> PathBuf {
        self.root.join(&cid.as_str()[..2]).join(cid.as_str())
    }
}

impl ContentStore for DiskStore {
    fn put(&self, bytes: &[u8]) -> Result<Cid, CasError> {
        let cid = Cid::of(bytes);
        let path = self.path_of(&cid);
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        if path.exists() {
            return Ok(cid);
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        // Readers never observe a partially written blob.
        let tmp = dir.join(format!(".{}.tmp", cid.as_str()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(cid)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        match fs::read(self.path_of(cid)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(CasError::NotFound(cid.clone())),
            Err(e) => Err(e.into()),
        }
    }

    fn has(&self, cid: &Cid) -> Result<bool, CasError> {
        Ok(self.path_of(cid).is_file())
    }

    fn len(&self) -> Result<usize, CasError> {
        let mut n = 0;
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(shard.path())? {
                let name = entry?.file_name();
                if Cid::parse(&name.to_string_lossy()).is_ok() {
                    n += 1;
                }
            }
        }
        Ok(n)
    }
}
