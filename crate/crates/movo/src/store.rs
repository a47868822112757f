//! Content-addressed object store with a deterministic service-time model.
//!
//! Objects are keyed by the hash of their bytes, so the store is
//! self-certifying: a reader can re-hash what it fetched and compare against
//! the digest it asked for. Ingestion is modeled as a pool of
//! `concurrent_limit` upload slots, each busy for
//! `base_latency + ceil(bytes / bandwidth)` per put. Offered load beyond
//! `limit / latency` queues up and completed throughput plateaus, which is
//! what the saturation scenario measures.

use crate::clock::SimClock;
use crate::crypto::{hash, Digest};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::PathBuf;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storing {needed} bytes would exceed the capacity of {capacity} bytes")]
    StorageFull { needed: u64, capacity: u64 },
    #[error("persisted object {path} does not match its filename digest")]
    CorruptFile { path: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoreConfig {
    /// Fixed per-put service latency in milliseconds.
    pub base_latency_ms: u64,
    /// Upload bandwidth applied to the size-dependent latency term.
    pub bandwidth_bytes_per_s: u64,
    /// Number of puts serviced concurrently; more than this queues.
    pub concurrent_limit: usize,
    /// Hard cap on unique stored bytes; `None` is unbounded.
    pub capacity_bytes: Option<u64>,
    /// Sliding window for the rate statistics.
    pub stats_window_ms: u64,
    /// When set, every object is also written to this directory, one file
    /// per object named by its hex digest.
    pub persist_dir: Option<PathBuf>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            base_latency_ms: 50,
            bandwidth_bytes_per_s: 50_000_000,
            concurrent_limit: 128,
            capacity_bytes: None,
            stats_window_ms: 60_000,
            persist_dir: None,
        }
    }
}

/// Outcome of a put: when it was accepted, when its upload slot frees, and
/// whether the bytes were already present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PutReceipt {
    pub digest: Digest,
    pub accepted_at: u64,
    pub completes_at: u64,
    pub deduplicated: bool,
}

/// Snapshot of store counters and sliding-window rates.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct StoreStats {
    pub object_count: u64,
    pub total_bytes: u64,
    /// Bytes accepted in the window, scaled to a per-minute rate.
    pub put_rate_bytes_per_min: f64,
    /// Puts accepted in the window, scaled to a per-second rate.
    pub request_rate_per_s: f64,
    /// Puts whose service completed in the window, scaled to per-second.
    pub completed_rate_per_s: f64,
    /// Puts accepted but not yet serviced at the time of the snapshot.
    pub in_flight: u64,
}

struct StoreState {
    objects: BTreeMap<Digest, StoredObject>,
    /// Free times of busy upload slots, earliest first.
    slots: BinaryHeap<Reverse<u64>>,
    /// One entry per accepted put: (accepted_at, completes_at, bytes).
    events: Vec<(u64, u64, u64)>,
}

struct StoredObject {
    bytes: Vec<u8>,
    stored_at: u64,
}

pub struct Store {
    clock: SimClock,
    config: StoreConfig,
    state: Mutex<StoreState>,
}

impl Store {
    pub fn new(clock: SimClock, config: StoreConfig) -> Result<Store, StoreError> {
        let store = Store {
            clock,
            config,
            state: Mutex::new(StoreState {
                objects: BTreeMap::new(),
                slots: BinaryHeap::new(),
                events: Vec::new(),
            }),
        };
        if let Some(dir) = &store.config.persist_dir {
            std::fs::create_dir_all(dir)?;
            store.load_persisted(dir.clone())?;
        }
        Ok(store)
    }

    fn load_persisted(&self, dir: PathBuf) -> Result<(), StoreError> {
        let mut st = self.state.lock().unwrap();
        let now = self.clock.now_ms();
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(expected) = Digest::from_hex(&name) else {
                continue; // not an object file
            };
            let bytes = std::fs::read(entry.path())?;
            if hash(&bytes) != expected {
                return Err(StoreError::CorruptFile {
                    path: entry.path().display().to_string(),
                });
            }
            st.objects.insert(
                expected,
                StoredObject {
                    bytes,
                    stored_at: now,
                },
            );
        }
        Ok(())
    }

    /// Service time for one put of `len` bytes.
    pub fn service_time_ms(&self, len: usize) -> u64 {
        self.config.base_latency_ms + (len as u64 * 1000).div_ceil(self.config.bandwidth_bytes_per_s)
    }

    /// Store bytes under their hash. Re-putting identical bytes returns the
    /// same digest without growing the store, but still occupies an upload
    /// slot: deduplication saves space, not wire time.
    pub fn put(&self, bytes: &[u8]) -> Result<PutReceipt, StoreError> {
        let digest = hash(bytes);
        let now = self.clock.now_ms();
        let service = self.service_time_ms(bytes.len());
        let mut st = self.state.lock().unwrap();

        let deduplicated = st.objects.contains_key(&digest);
        if !deduplicated {
            if let Some(cap) = self.config.capacity_bytes {
                let current: u64 = st.objects.values().map(|o| o.bytes.len() as u64).sum();
                let needed = current + bytes.len() as u64;
                if needed > cap {
                    return Err(StoreError::StorageFull {
                        needed,
                        capacity: cap,
                    });
                }
            }
        }

        while let Some(Reverse(free)) = st.slots.peek().copied() {
            if free <= now {
                st.slots.pop();
            } else {
                break;
            }
        }
        let start = if st.slots.len() < self.config.concurrent_limit {
            now
        } else {
            let Reverse(earliest) = st.slots.pop().expect("non-empty at limit");
            earliest.max(now)
        };
        let completes_at = start + service;
        st.slots.push(Reverse(completes_at));
        st.events.push((now, completes_at, bytes.len() as u64));

        if !deduplicated {
            st.objects.insert(
                digest,
                StoredObject {
                    bytes: bytes.to_vec(),
                    stored_at: completes_at,
                },
            );
            if let Some(dir) = &self.config.persist_dir {
                std::fs::write(dir.join(digest.to_hex()), bytes)?;
            }
        }

        Ok(PutReceipt {
            digest,
            accepted_at: now,
            completes_at,
            deduplicated,
        })
    }

    /// Exact stored bytes, or `None` for an unknown digest.
    pub fn get(&self, digest: &Digest) -> Option<Vec<u8>> {
        self.state
            .lock()
            .unwrap()
            .objects
            .get(digest)
            .map(|o| o.bytes.clone())
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.state.lock().unwrap().objects.contains_key(digest)
    }

    /// Completion time recorded for a stored object.
    pub fn stored_at(&self, digest: &Digest) -> Option<u64> {
        self.state
            .lock()
            .unwrap()
            .objects
            .get(digest)
            .map(|o| o.stored_at)
    }

    pub fn stats(&self) -> StoreStats {
        let now = self.clock.now_ms();
        let window = self.config.stats_window_ms;
        let from = now.saturating_sub(window);
        let st = self.state.lock().unwrap();
        let mut window_bytes = 0u64;
        let mut window_requests = 0u64;
        let mut window_completed = 0u64;
        let mut in_flight = 0u64;
        for &(accepted, completes, bytes) in &st.events {
            if accepted >= from && accepted <= now {
                window_bytes += bytes;
                window_requests += 1;
            }
            if completes >= from && completes <= now {
                window_completed += 1;
            }
            if completes > now {
                in_flight += 1;
            }
        }
        let window_min = window as f64 / 60_000.0;
        let window_s = window as f64 / 1_000.0;
        StoreStats {
            object_count: st.objects.len() as u64,
            total_bytes: st.objects.values().map(|o| o.bytes.len() as u64).sum(),
            put_rate_bytes_per_min: window_bytes as f64 / window_min,
            request_rate_per_s: window_requests as f64 / window_s,
            completed_rate_per_s: window_completed as f64 / window_s,
            in_flight,
        }
    }

    /// Fault injection: flip one bit of a stored object in memory, leaving
    /// its digest key untouched, so readers that re-hash will catch it.
    pub fn corrupt(&self, digest: &Digest, byte_index: usize) -> bool {
        let mut st = self.state.lock().unwrap();
        match st.objects.get_mut(digest) {
            Some(obj) if !obj.bytes.is_empty() => {
                let idx = byte_index % obj.bytes.len();
                obj.bytes[idx] ^= 0x01;
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn store() -> (SimClock, Store) {
        let clock = SimClock::new();
        let store = Store::new(clock.clone(), StoreConfig::default()).unwrap();
        (clock, store)
    }

    #[test]
    fn get_put_round_trip_and_absence() {
        let (_, s) = store();
        let receipt = s.put(b"object bytes").unwrap();
        assert_eq!(s.get(&receipt.digest).unwrap(), b"object bytes");
        assert_eq!(s.get(&hash(b"never stored")), None);
    }

    #[test]
    fn put_is_idempotent() {
        let (_, s) = store();
        let a = s.put(b"same").unwrap();
        let before = s.stats();
        let b = s.put(b"same").unwrap();
        let after = s.stats();
        assert_eq!(a.digest, b.digest);
        assert!(b.deduplicated);
        assert_eq!(before.object_count, after.object_count);
        assert_eq!(before.total_bytes, after.total_bytes);
    }

    #[test]
    fn thousand_objects_self_certify() {
        // Re-hash oracle: every get returns bytes hashing to the digest
        // that was requested.
        let (_, s) = store();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let mut digests = Vec::new();
        for _ in 0..1000 {
            let mut data = vec![0u8; 64];
            rng.fill_bytes(&mut data);
            digests.push(s.put(&data).unwrap().digest);
        }
        for d in digests {
            assert_eq!(hash(&s.get(&d).unwrap()), d);
        }
    }

    #[test]
    fn frame_packets_reach_sixty_megabytes_per_minute() {
        // 100 KB packets, 10 per second for 60 s.
        let (clock, s) = store();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..60 {
            for _ in 0..10 {
                let mut packet = vec![0u8; 100_000];
                rng.fill_bytes(&mut packet);
                s.put(&packet).unwrap();
                clock.advance_ms(100);
            }
        }
        let stats = s.stats();
        let mb_per_min = stats.put_rate_bytes_per_min / 1e6;
        assert!((mb_per_min - 60.0).abs() / 60.0 < 0.05, "got {mb_per_min} MB/min");
        assert!((stats.request_rate_per_s - 10.0).abs() < 0.5);
    }

    #[test]
    fn vehicle_points_reach_one_point_six_megabytes_per_minute() {
        // ~300-byte points, 90 per second for 60 s.
        let (clock, s) = store();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _second in 0..60 {
            for _ in 0..90 {
                let mut point = vec![0u8; 300];
                rng.fill_bytes(&mut point);
                s.put(&point).unwrap();
                clock.advance_ms(11);
            }
            clock.advance_ms(1000 - 90 * 11);
        }
        let stats = s.stats();
        let mb_per_min = stats.put_rate_bytes_per_min / 1e6;
        assert!((mb_per_min - 1.62).abs() / 1.62 < 0.05, "got {mb_per_min} MB/min");
        assert!((stats.request_rate_per_s - 90.0).abs() < 2.0);
    }

    #[test]
    fn service_time_includes_bandwidth_term() {
        let (_, s) = store();
        // 50 MB/s moves 100 KB in 2 ms.
        assert_eq!(s.service_time_ms(100_000), 52);
        assert_eq!(s.service_time_ms(0), 50);
        // Any remainder rounds up to a whole millisecond.
        assert_eq!(s.service_time_ms(300), 51);
    }

    #[test]
    fn overload_queues_and_throughput_plateaus() {
        // 30 slots at ~501 ms per put bound completed throughput near
        // 59.9 puts/s; offer 90/s and watch completions plateau.
        let clock = SimClock::new();
        let s = Store::new(
            clock.clone(),
            StoreConfig {
                base_latency_ms: 500,
                concurrent_limit: 30,
                ..StoreConfig::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for second in 0..60u64 {
            for i in 0..90u64 {
                let mut point = [0u8; 300];
                rng.fill_bytes(&mut point);
                point[..8].copy_from_slice(&(second * 90 + i).to_be_bytes());
                s.put(&point).unwrap();
                if i % 9 == 8 {
                    clock.advance_ms(100);
                }
            }
        }
        let stats = s.stats();
        let capacity = 30.0 / 0.501;
        assert!(
            (stats.completed_rate_per_s - capacity).abs() / capacity < 0.10,
            "completed {} vs capacity bound {capacity}",
            stats.completed_rate_per_s
        );
        assert!(stats.request_rate_per_s > 85.0);
        assert!(stats.in_flight > 1000);
    }

    #[test]
    fn capacity_cap_yields_storage_full() {
        let clock = SimClock::new();
        let s = Store::new(
            clock,
            StoreConfig {
                capacity_bytes: Some(10),
                ..StoreConfig::default()
            },
        )
        .unwrap();
        s.put(b"123456").unwrap();
        let err = s.put(b"789012").unwrap_err();
        assert!(matches!(
            err,
            StoreError::StorageFull { needed: 12, capacity: 10 }
        ));
        // Identical bytes do not consume new capacity.
        assert!(s.put(b"123456").unwrap().deduplicated);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clock = SimClock::new();
        let config = StoreConfig {
            persist_dir: Some(dir.path().to_path_buf()),
            ..StoreConfig::default()
        };
        let digest = {
            let s = Store::new(clock.clone(), config.clone()).unwrap();
            s.put(b"durable bytes").unwrap().digest
        };
        assert!(dir.path().join(digest.to_hex()).exists());
        let reopened = Store::new(clock, config).unwrap();
        assert_eq!(reopened.get(&digest).unwrap(), b"durable bytes");
    }

    #[test]
    fn corruption_is_visible_to_rehashing_readers() {
        let (_, s) = store();
        let receipt = s.put(b"pristine").unwrap();
        assert!(s.corrupt(&receipt.digest, 3));
        let fetched = s.get(&receipt.digest).unwrap();
        assert_ne!(hash(&fetched), receipt.digest);
        assert!(!s.corrupt(&hash(b"missing"), 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn get_put_identity(len in 0usize..1_048_576, seed in any::<u64>()) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut data = vec![0u8; len];
            rng.fill_bytes(&mut data);
            let (_, s) = store();
            let receipt = s.put(&data).unwrap();
            prop_assert_eq!(s.get(&receipt.digest).unwrap(), data);
        }
    }
}
