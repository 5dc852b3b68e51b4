use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;

use super::{conflict, RecordKey, Store, VersionedRecord};
use crate::error::Result;

type Records = BTreeMap<RecordKey, (Arc<Vec<u8>>, u64)>;

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: RwLock<Records>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn get(&self, key: &RecordKey) -> Result<Option<VersionedRecord>> {
        Ok(self.records.read().get(key).map(|(payload, version)| VersionedRecord {
            key: key.clone(),
            payload: payload.clone(),
            version: *version,
        }))
    }

    fn put(&self, key: &RecordKey, payload: Vec<u8>, expected_version: u64) -> Result<u64> {
        let mut records = self.records.write();
        let current = records.get(key).map_or(0, |(_, v)| *v);
        if current != expected_version {
            return Err(conflict(key, expected_version, current));
        }
        let version = current + 1;
        records.insert(key.clone(), (Arc::new(payload), version));
        Ok(version)
    }

    fn scan(&self, kind: &str, predicate: &dyn Fn(&VersionedRecord) -> bool) -> Result<Vec<VersionedRecord>> {
        let records = self.records.read();
        let start = RecordKey::new(kind, "");
        Ok(records
            .range(start..)
            .take_while(|(k, _)| k.kind == kind)
            .map(|(k, (payload, version))| VersionedRecord {
                key: k.clone(),
                payload: payload.clone(),
                version: *version,
            })
            .filter(|r| predicate(r))
            .collect())
    }
}
