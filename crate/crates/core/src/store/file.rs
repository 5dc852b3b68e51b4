//! Append-only, CRC-checked log engine.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header  : b"OCSTORE1"
//! record* : len:u32 crc32:u32 body[len]
//! body    : seq:u64 version:u64 kind_len:u16 kind id_len:u16 id payload
//! ```
//!
//! `crc32` covers `body`. Sequence numbers are strictly increasing. On open
//! the log is replayed; a truncated final record (torn write) is cut off,
//! while a complete record with a bad checksum fails the open with
//! `CORRUPT_RECORD`. Compaction rewrites the live set into a fresh file and
//! atomically renames it over the log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use super::{conflict, RecordKey, Store, VersionedRecord};
use crate::error::{Error, ErrorCode, Result};

const MAGIC: &[u8; 8] = b"OCSTORE1";
const FRAME_HEADER: usize = 8;

#[derive(Debug, Clone)]
pub struct FileStoreOptions {
    /// fsync after every append.
    pub sync: bool,
    /// Compact once the log holds this many records and more than twice the live set.
    pub compact_after: usize,
}

impl Default for FileStoreOptions {
    fn default() -> Self {
        Self {
            sync: true,
            compact_after: 10_000,
        }
    }
}

struct Entry {
    payload: Arc<Vec<u8>>,
    version: u64,
    seq: u64,
}

struct Log {
    file: File,
    next_seq: u64,
    records_in_log: usize,
}

pub struct FileStore {
    path: PathBuf,
    options: FileStoreOptions,
    index: RwLock<BTreeMap<RecordKey, Entry>>,
    log: Mutex<Log>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::internal(format!("{}: {e}", path.display()))
}

fn corrupt(path: &Path, offset: u64, why: &str) -> Error {
    Error::new(
        ErrorCode::CorruptRecord,
        format!("{} at byte {offset}: {why}", path.display()),
    )
}

fn encode(seq: u64, key: &RecordKey, version: u64, payload: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(20 + key.kind.len() + key.id.len() + payload.len());
    body.extend_from_slice(&seq.to_le_bytes());
    body.extend_from_slice(&version.to_le_bytes());
    body.extend_from_slice(&(key.kind.len() as u16).to_le_bytes());
    body.extend_from_slice(key.kind.as_bytes());
    body.extend_from_slice(&(key.id.len() as u16).to_le_bytes());
    body.extend_from_slice(key.id.as_bytes());
    body.extend_from_slice(payload);
    let mut frame = Vec::with_capacity(FRAME_HEADER + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

struct Decoded {
    seq: u64,
    version: u64,
    key: RecordKey,
    payload: Vec<u8>,
}

fn decode(body: &[u8]) -> Option<Decoded> {
    let take_u64 = |b: &[u8], at: usize| b.get(at..at + 8).map(|s| u64::from_le_bytes(s.try_into().unwrap()));
    let take_u16 = |b: &[u8], at: usize| b.get(at..at + 2).map(|s| u16::from_le_bytes(s.try_into().unwrap()) as usize);
    let seq = take_u64(body, 0)?;
    let version = take_u64(body, 8)?;
    let kind_len = take_u16(body, 16)?;
    let kind = std::str::from_utf8(body.get(18..18 + kind_len)?).ok()?;
    let id_at = 18 + kind_len;
    let id_len = take_u16(body, id_at)?;
    let id = std::str::from_utf8(body.get(id_at + 2..id_at + 2 + id_len)?).ok()?;
    let payload = body.get(id_at + 2 + id_len..)?.to_vec();
    Some(Decoded {
        seq,
        version,
        key: RecordKey::new(kind, id),
        payload,
    })
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, FileStoreOptions::default())
    }

    pub fn open_with(path: impl AsRef<Path>, options: FileStoreOptions) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let len = file.metadata().map_err(|e| io_err(&path, e))?.len();
        if len == 0 {
            file.write_all(MAGIC).map_err(|e| io_err(&path, e))?;
            file.sync_all().map_err(|e| io_err(&path, e))?;
        }
        let (index, next_seq, records_in_log, valid_len) = Self::replay(&path, &file)?;
        if valid_len < len.max(MAGIC.len() as u64) {
            tracing::warn!(path = %path.display(), valid_len, len, "truncating torn tail of store log");
            file.set_len(valid_len).map_err(|e| io_err(&path, e))?;
            file.sync_all().map_err(|e| io_err(&path, e))?;
        }
        Ok(Self {
            path,
            options,
            index: RwLock::new(index),
            log: Mutex::new(Log {
                file,
                next_seq,
                records_in_log,
            }),
        })
    }

    #[allow(clippy::type_complexity)]
    fn replay(path: &Path, file: &File) -> Result<(BTreeMap<RecordKey, Entry>, u64, usize, u64)> {
        let mut reader = BufReader::new(file.try_clone().map_err(|e| io_err(path, e))?);
        reader.seek(SeekFrom::Start(0)).map_err(|e| io_err(path, e))?;
        let mut magic = [0u8; 8];
        reader
            .read_exact(&mut magic)
            .map_err(|_| corrupt(path, 0, "missing header"))?;
        if &magic != MAGIC {
            return Err(corrupt(path, 0, "bad magic"));
        }
        let mut index = BTreeMap::new();
        let mut offset = MAGIC.len() as u64;
        let mut last_seq = 0u64;
        let mut count = 0usize;
        loop {
            let mut header = [0u8; FRAME_HEADER];
            match read_full(&mut reader, &mut header).map_err(|e| io_err(path, e))? {
                0 => break,
                n if n < FRAME_HEADER => break,
                _ => {}
            }
            let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
            let crc = u32::from_le_bytes(header[4..].try_into().unwrap());
            let mut body = vec![0u8; len];
            if read_full(&mut reader, &mut body).map_err(|e| io_err(path, e))? < len {
                break;
            }
            if crc32fast::hash(&body) != crc {
                return Err(corrupt(path, offset, "checksum mismatch"));
            }
            let rec = decode(&body).ok_or_else(|| corrupt(path, offset, "malformed body"))?;
            if rec.seq <= last_seq {
                return Err(corrupt(path, offset, "sequence number not increasing"));
            }
            last_seq = rec.seq;
            index.insert(
                rec.key,
                Entry {
                    payload: Arc::new(rec.payload),
                    version: rec.version,
                    seq: rec.seq,
                },
            );
            offset += (FRAME_HEADER + len) as u64;
            count += 1;
        }
        Ok((index, last_seq + 1, count, offset))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rewrites the log so it holds exactly one record per live key.
    pub fn compact(&self) -> Result<()> {
        let index = self.index.read();
        let mut log = self.log.lock();
        self.compact_locked(&index, &mut log)
    }

    fn compact_locked(&self, index: &BTreeMap<RecordKey, Entry>, log: &mut Log) -> Result<()> {
        let tmp = self.path.with_extension("compact.tmp");
        {
            let f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
            let mut w = BufWriter::new(f);
            w.write_all(MAGIC).map_err(|e| io_err(&tmp, e))?;
            let mut live: Vec<_> = index.iter().collect();
            live.sort_by_key(|(_, e)| e.seq);
            for (key, entry) in &live {
                w.write_all(&encode(entry.seq, key, entry.version, &entry.payload))
                    .map_err(|e| io_err(&tmp, e))?;
            }
            let f = w.into_inner().map_err(|e| io_err(&tmp, e.into_error()))?;
            f.sync_all().map_err(|e| io_err(&tmp, e))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| io_err(&self.path, e))?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        log.file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        log.records_in_log = index.len();
        Ok(())
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

impl Store for FileStore {
    fn get(&self, key: &RecordKey) -> Result<Option<VersionedRecord>> {
        Ok(self.index.read().get(key).map(|e| VersionedRecord {
            key: key.clone(),
            payload: e.payload.clone(),
            version: e.version,
        }))
    }

    fn put(&self, key: &RecordKey, payload: Vec<u8>, expected_version: u64) -> Result<u64> {
        if key.kind.len() > u16::MAX as usize || key.id.len() > u16::MAX as usize {
            return Err(Error::validation("record key too long"));
        }
        let mut index = self.index.write();
        let current = index.get(key).map_or(0, |e| e.version);
        if current != expected_version {
            return Err(conflict(key, expected_version, current));
        }
        let mut log = self.log.lock();
        let seq = log.next_seq;
        let version = current + 1;
        let frame = encode(seq, key, version, &payload);
        log.file.write_all(&frame).map_err(|e| io_err(&self.path, e))?;
        if self.options.sync {
            log.file.sync_data().map_err(|e| io_err(&self.path, e))?;
        }
        log.next_seq += 1;
        log.records_in_log += 1;
        index.insert(
            key.clone(),
            Entry {
                payload: Arc::new(payload),
                version,
                seq,
            },
        );
        if log.records_in_log >= self.options.compact_after && log.records_in_log > 2 * index.len() {
            if let Err(e) = self.compact_locked(&index, &mut log) {
                // The append already committed; a failed compaction only costs space.
                tracing::warn!(error = %e, "store compaction failed");
            }
        }
        Ok(version)
    }

    fn scan(&self, kind: &str, predicate: &dyn Fn(&VersionedRecord) -> bool) -> Result<Vec<VersionedRecord>> {
        let index = self.index.read();
        Ok(index
            .range(RecordKey::new(kind, "")..)
            .take_while(|(k, _)| k.kind == kind)
            .map(|(k, e)| VersionedRecord {
                key: k.clone(),
                payload: e.payload.clone(),
                version: e.version,
            })
            .filter(|r| predicate(r))
            .collect())
    }
}
