use std::collections::BTreeMap;
use std::sync::Arc;

use opencourier_core::store::{FileStore, FileStoreOptions, MemoryStore, RecordKey, Store};
use opencourier_core::ErrorCode;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Put { key: u8, stale: bool, byte: u8 },
    Get(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..6, prop::bool::weighted(0.2), any::<u8>()).prop_map(|(key, stale, byte)| Op::Put { key, stale, byte }),
        (0u8..6).prop_map(Op::Get),
    ]
}

fn key(k: u8) -> RecordKey {
    RecordKey::new(if k & 1 == 0 { "even" } else { "odd" }, format!("k{k}"))
}

/// Runs `ops` against `store` and a map model side by side.
fn check(store: &dyn Store, ops: &[Op], model: &mut BTreeMap<u8, (u64, Vec<u8>)>) -> Result<(), TestCaseError> {
    for op in ops {
        match *op {
            Op::Put { key: k, stale, byte } => {
                let current = model.get(&k).map_or(0, |m| m.0);
                let expected = if stale { current + 1 } else { current };
                let r = store.put(&key(k), vec![byte; 3], expected);
                if stale {
                    prop_assert_eq!(r.unwrap_err().code, ErrorCode::VersionConflict);
                } else {
                    prop_assert_eq!(r.unwrap(), current + 1);
                    model.insert(k, (current + 1, vec![byte; 3]));
                }
            }
            Op::Get(k) => {
                let got = store.get(&key(k)).unwrap().map(|r| (r.version, r.payload.to_vec()));
                prop_assert_eq!(got, model.get(&k).cloned());
            }
        }
    }
    let evens = store.scan("even", &|_| true).unwrap();
    prop_assert_eq!(evens.len(), model.keys().filter(|k| *k % 2 == 0).count());
    prop_assert!(evens.windows(2).all(|w| w[0].key.id < w[1].key.id));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn memory_store_matches_model(ops in prop::collection::vec(op(), 0..80)) {
        check(&MemoryStore::new(), &ops, &mut BTreeMap::new())?;
    }

    #[test]
    fn file_store_matches_model_across_reopen(ops in prop::collection::vec(op(), 0..80), split in 0usize..80) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.log");
        let opts = FileStoreOptions { sync: false, compact_after: 16 };
        let split = split.min(ops.len());
        let mut model = BTreeMap::new();
        check(&FileStore::open_with(&path, opts.clone()).unwrap(), &ops[..split], &mut model)?;
        check(&FileStore::open_with(&path, opts).unwrap(), &ops[split..], &mut model)?;
    }
}

#[test]
fn concurrent_increments_are_not_lost() {
    let store: Arc<dyn Store> = Arc::new(MemoryStore::new());
    let threads: Vec<_> = (0..4)
        .map(|_| {
            let s = store.clone();
            std::thread::spawn(move || {
                for _ in 0..250 {
                    loop {
                        let cur = s.get(&key(0)).unwrap();
                        let (v, n) = cur.map_or((0, 0u64), |r| (r.version, u64::from_le_bytes(r.payload[..8].try_into().unwrap())));
                        if s.put(&key(0), (n + 1).to_le_bytes().to_vec(), v).is_ok() {
                            break;
                        }
                    }
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    let r = store.get(&key(0)).unwrap().unwrap();
    assert_eq!(r.version, 1000);
    assert_eq!(u64::from_le_bytes(r.payload[..8].try_into().unwrap()), 1000);
}
