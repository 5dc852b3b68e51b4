//! Versioned key/value persistence with per-key compare-and-set.
//!
//! Every aggregate (delivery, note, thread, ...) is stored as one record
//! keyed by `(kind, id)`. Writers must name the version they read; a stale
//! version is a `VERSION_CONFLICT`, never a silent overwrite.

mod file;
mod memory;

use std::marker::PhantomData;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, ErrorCode, Result};

pub use file::{FileStore, FileStoreOptions};
pub use memory::MemoryStore;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub kind: String,
    pub id: String,
}

impl RecordKey {
    pub fn new(kind: impl Into<String>, id: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            id: id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedRecord {
    pub key: RecordKey,
    pub payload: Arc<Vec<u8>>,
    pub version: u64,
}

pub trait Store: Send + Sync {
    fn get(&self, key: &RecordKey) -> Result<Option<VersionedRecord>>;

    /// Writes `payload` if the current version equals `expected_version`
    /// (0 for "does not exist yet") and returns the new version.
    fn put(&self, key: &RecordKey, payload: Vec<u8>, expected_version: u64) -> Result<u64>;

    /// All records of `kind` matching `predicate`, from one consistent
    /// snapshot, ordered by id.
    fn scan(&self, kind: &str, predicate: &dyn Fn(&VersionedRecord) -> bool) -> Result<Vec<VersionedRecord>>;
}

pub(crate) fn conflict(key: &RecordKey, expected: u64, actual: u64) -> Error {
    Error::new(
        ErrorCode::VersionConflict,
        format!("{}/{}: expected version {expected}, found {actual}", key.kind, key.id),
    )
    .with_details(serde_json::json!({ "expected": expected, "actual": actual }))
}

const MAX_CAS_RETRIES: usize = 128;

/// A decoded aggregate together with the version it was read at.
#[derive(Debug, Clone, PartialEq)]
pub struct Versioned<T> {
    pub value: T,
    pub version: u64,
}

/// Typed view over one aggregate kind, JSON-encoded.
pub struct Repo<T> {
    store: Arc<dyn Store>,
    kind: &'static str,
    _marker: PhantomData<fn() -> T>,
}

impl<T> Clone for Repo<T> {
    fn clone(&self) -> Self {
        Self {
            store: self.store.clone(),
            kind: self.kind,
            _marker: PhantomData,
        }
    }
}

impl<T: Serialize + DeserializeOwned + Clone> Repo<T> {
    pub fn new(store: Arc<dyn Store>, kind: &'static str) -> Self {
        Self {
            store,
            kind,
            _marker: PhantomData,
        }
    }

    fn key(&self, id: &str) -> RecordKey {
        RecordKey::new(self.kind, id)
    }

    fn decode(&self, rec: &VersionedRecord) -> Result<T> {
        serde_json::from_slice(&rec.payload).map_err(|e| {
            Error::new(
                ErrorCode::CorruptRecord,
                format!("{}/{} does not decode: {e}", rec.key.kind, rec.key.id),
            )
        })
    }

    pub fn get(&self, id: &str) -> Result<Option<Versioned<T>>> {
        self.store
            .get(&self.key(id))?
            .map(|rec| {
                Ok(Versioned {
                    value: self.decode(&rec)?,
                    version: rec.version,
                })
            })
            .transpose()
    }

    pub fn put(&self, id: &str, value: &T, expected_version: u64) -> Result<u64> {
        let payload = serde_json::to_vec(value).map_err(|e| Error::internal(e.to_string()))?;
        self.store.put(&self.key(id), payload, expected_version)
    }

    pub fn insert(&self, id: &str, value: &T) -> Result<u64> {
        self.put(id, value, 0)
    }

    /// Read-modify-write with optimistic retry. `apply` may run more than
    /// once and must not have side effects outside the value it mutates.
    /// Returning `Ok(false)` from `apply` skips the write.
    pub fn update<R>(&self, id: &str, mut apply: impl FnMut(&mut T) -> Result<(bool, R)>) -> Result<(Versioned<T>, R)> {
        for _ in 0..MAX_CAS_RETRIES {
            let current = self
                .get(id)?
                .ok_or_else(|| Error::not_found(self.kind, id))?;
            let mut next = current.value.clone();
            let (changed, out) = apply(&mut next)?;
            if !changed {
                return Ok((current, out));
            }
            match self.put(id, &next, current.version) {
                Ok(version) => return Ok((Versioned { value: next, version }, out)),
                Err(e) if e.code == ErrorCode::VersionConflict => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::new(
            ErrorCode::VersionConflict,
            format!("{}/{id}: too much contention", self.kind),
        ))
    }

    /// Every record of this kind with its id, ordered by id.
    pub fn entries(&self) -> Result<Vec<(String, T)>> {
        self.store
            .scan(self.kind, &|_| true)?
            .iter()
            .map(|rec| Ok((rec.key.id.clone(), self.decode(rec)?)))
            .collect()
    }

    pub fn scan(&self, predicate: impl Fn(&T) -> bool) -> Result<Vec<T>> {
        let records = self.store.scan(self.kind, &|_| true)?;
        let mut out = Vec::with_capacity(records.len());
        for rec in &records {
            let value = self.decode(rec)?;
            if predicate(&value) {
                out.push(value);
            }
        }
        Ok(out)
    }
}
