//! Simulated Tangle: a feeless DAG of fixed-capacity transactions where
//! every non-genesis transaction approves two previous ones.
//!
//! The ledger is a shared service. Attaches are linearized behind one lock;
//! tip selection is uniform-random over the current tip set and fully
//! deterministic under the configured seed. Confirmation is modeled as a
//! fixed delay on the simulated clock rather than a queueing system.

pub mod mam;

use crate::clock::SimClock;
use crate::crypto::{hash_parts, Digest};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;
use thiserror::Error;

/// Maximum payload bytes one transaction can carry. Message streams above
/// this size are chunked by the channel layer.
pub const CHUNK_CAPACITY: usize = 512;

/// Default delay between attachment and confirmation on the simulated clock.
pub const DEFAULT_CONFIRMATION_LATENCY_MS: u64 = 20_000;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("payload of {len} bytes exceeds chunk capacity {capacity}")]
    PayloadTooLarge { len: usize, capacity: usize },
    #[error("unknown transaction {0}")]
    UnknownTx(Digest),
    #[error("malformed ledger dump at line {line}: {reason}")]
    MalformedDump { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("encoding error: {0}")]
    Encode(#[from] serde_json::Error),
}

/// One transaction in the DAG. `id` is a pure function of the remaining
/// fields, so content tampering is detectable by re-hashing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerTx {
    pub id: Digest,
    pub trunk: Digest,
    pub branch: Digest,
    pub timestamp: u64,
    pub payload: Vec<u8>,
    pub confirmed_at: u64,
}

impl LedgerTx {
    pub fn compute_id(trunk: &Digest, branch: &Digest, timestamp: u64, payload: &[u8]) -> Digest {
        hash_parts(&[
            b"movo-ledger-tx",
            &trunk.0,
            &branch.0,
            &timestamp.to_be_bytes(),
            payload,
        ])
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LedgerConfig {
    pub confirmation_latency_ms: u64,
    /// Seed for the tip-selection RNG; fixed seed gives a reproducible DAG.
    pub tip_seed: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            confirmation_latency_ms: DEFAULT_CONFIRMATION_LATENCY_MS,
            tip_seed: 0,
        }
    }
}

struct TangleState {
    txs: BTreeMap<Digest, LedgerTx>,
    /// Attach order; index 0 is genesis.
    order: Vec<Digest>,
    /// Transactions not yet approved by any other transaction.
    tips: Vec<Digest>,
    /// Node-side convenience index, populated by `attach_at`. Not persisted
    /// by dump/load; readers of a loaded ledger work from raw transactions.
    by_address: BTreeMap<Digest, Vec<Digest>>,
    rng: ChaCha12Rng,
}

pub struct Tangle {
    clock: SimClock,
    config: LedgerConfig,
    state: Mutex<TangleState>,
}

impl std::fmt::Debug for Tangle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let st = self.state.lock().unwrap();
        f.debug_struct("Tangle")
            .field("txs", &st.order.len())
            .field("tips", &st.tips.len())
            .finish()
    }
}

impl Tangle {
    /// Create a ledger holding only the genesis transaction, which is its
    /// own confirmation (both parent slots are the zero digest).
    pub fn new(clock: SimClock, config: LedgerConfig) -> Tangle {
        let timestamp = clock.now_ms();
        let payload = b"genesis".to_vec();
        let id = LedgerTx::compute_id(&Digest::ZERO, &Digest::ZERO, timestamp, &payload);
        let genesis = LedgerTx {
            id,
            trunk: Digest::ZERO,
            branch: Digest::ZERO,
            timestamp,
            payload,
            confirmed_at: timestamp,
        };
        let mut txs = BTreeMap::new();
        txs.insert(id, genesis);
        Tangle {
            clock,
            config,
            state: Mutex::new(TangleState {
                txs,
                order: vec![id],
                tips: vec![id],
                by_address: BTreeMap::new(),
                rng: ChaCha12Rng::seed_from_u64(config.tip_seed),
            }),
        }
    }

    pub fn clock(&self) -> SimClock {
        self.clock.clone()
    }

    pub fn config(&self) -> LedgerConfig {
        self.config
    }

    /// Append a transaction approving two uniformly chosen tips. With a
    /// single tip, trunk and branch coincide; with more, they are distinct.
    pub fn attach(&self, payload: Vec<u8>) -> Result<Digest, LedgerError> {
        self.attach_inner(None, payload)
    }

    /// Like [`attach`](Self::attach), but also records the transaction in
    /// the address index so channel readers can find it.
    pub fn attach_at(&self, address: Digest, payload: Vec<u8>) -> Result<Digest, LedgerError> {
        self.attach_inner(Some(address), payload)
    }

    fn attach_inner(&self, address: Option<Digest>, payload: Vec<u8>) -> Result<Digest, LedgerError> {
        if payload.len() > CHUNK_CAPACITY {
            return Err(LedgerError::PayloadTooLarge {
                len: payload.len(),
                capacity: CHUNK_CAPACITY,
            });
        }
        let mut guard = self.state.lock().unwrap();
        let st = &mut *guard;
        let (trunk, branch) = select_tips(&mut st.rng, &st.tips);
        let timestamp = self.clock.now_ms();
        let id = LedgerTx::compute_id(&trunk, &branch, timestamp, &payload);
        let tx = LedgerTx {
            id,
            trunk,
            branch,
            timestamp,
            payload,
            confirmed_at: timestamp + self.config.confirmation_latency_ms,
        };
        st.tips.retain(|t| *t != trunk && *t != branch);
        st.tips.push(id);
        st.order.push(id);
        st.txs.insert(id, tx);
        if let Some(addr) = address {
            st.by_address.entry(addr).or_default().push(id);
        }
        Ok(id)
    }

    pub fn transaction(&self, id: &Digest) -> Option<LedgerTx> {
        self.state.lock().unwrap().txs.get(id).cloned()
    }

    /// Transactions recorded at an address, in attach order.
    pub fn txs_at(&self, address: &Digest) -> Vec<LedgerTx> {
        let st = self.state.lock().unwrap();
        st.by_address
            .get(address)
            .map(|ids| ids.iter().map(|id| st.txs[id].clone()).collect())
            .unwrap_or_default()
    }

    pub fn tips(&self) -> Vec<Digest> {
        self.state.lock().unwrap().tips.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().order.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a ledger always holds at least its genesis
    }

    pub fn genesis_id(&self) -> Digest {
        self.state.lock().unwrap().order[0]
    }

    /// All transactions in attach order (genesis first).
    pub fn all_txs(&self) -> Vec<LedgerTx> {
        let st = self.state.lock().unwrap();
        st.order.iter().map(|id| st.txs[id].clone()).collect()
    }

    /// Whether the confirmation delay for `id` has elapsed on the clock.
    pub fn is_confirmed(&self, id: &Digest) -> Option<bool> {
        let confirmed_at = self.state.lock().unwrap().txs.get(id)?.confirmed_at;
        Some(self.clock.now_ms() >= confirmed_at)
    }

    /// Fault injection for integrity tests: flip one bit of a stored
    /// payload without recomputing the id, as silent storage corruption
    /// would. `byte_index` wraps modulo the payload length.
    pub fn tamper_payload(&self, id: &Digest, byte_index: usize) -> Result<(), LedgerError> {
        let mut st = self.state.lock().unwrap();
        let tx = st.txs.get_mut(id).ok_or(LedgerError::UnknownTx(*id))?;
        if tx.payload.is_empty() {
            return Err(LedgerError::MalformedDump {
                line: 0,
                reason: "cannot tamper an empty payload".into(),
            });
        }
        let idx = byte_index % tx.payload.len();
        tx.payload[idx] ^= 0x01;
        Ok(())
    }

    /// Write one JSON object per transaction, in attach order, with fields
    /// in the canonical order id, trunk, branch, timestamp, payload_base64.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<(), LedgerError> {
        for tx in self.all_txs() {
            let line = DumpLine {
                id: tx.id,
                trunk: tx.trunk,
                branch: tx.branch,
                timestamp: tx.timestamp,
                payload_base64: BASE64.encode(&tx.payload),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    /// Rebuild a ledger from a dump. Ids are recomputed and checked, parent
    /// references must point backwards, and the tip set is reconstructed.
    /// The address index is not part of a dump and starts empty.
    pub fn load<R: BufRead>(
        clock: SimClock,
        config: LedgerConfig,
        input: R,
    ) -> Result<Tangle, LedgerError> {
        let mut txs: BTreeMap<Digest, LedgerTx> = BTreeMap::new();
        let mut order: Vec<Digest> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: DumpLine =
                serde_json::from_str(&line).map_err(|e| LedgerError::MalformedDump {
                    line: lineno + 1,
                    reason: e.to_string(),
                })?;
            let payload =
                BASE64
                    .decode(parsed.payload_base64.as_bytes())
                    .map_err(|e| LedgerError::MalformedDump {
                        line: lineno + 1,
                        reason: format!("payload_base64: {e}"),
                    })?;
            let expected =
                LedgerTx::compute_id(&parsed.trunk, &parsed.branch, parsed.timestamp, &payload);
            if expected != parsed.id {
                return Err(LedgerError::MalformedDump {
                    line: lineno + 1,
                    reason: "id does not match transaction content".into(),
                });
            }
            let is_genesis = order.is_empty();
            if is_genesis {
                if parsed.trunk != Digest::ZERO || parsed.branch != Digest::ZERO {
                    return Err(LedgerError::MalformedDump {
                        line: lineno + 1,
                        reason: "first transaction must be genesis (zero parents)".into(),
                    });
                }
            } else if !txs.contains_key(&parsed.trunk) || !txs.contains_key(&parsed.branch) {
                return Err(LedgerError::MalformedDump {
                    line: lineno + 1,
                    reason: "parent reference to a transaction not seen yet".into(),
                });
            }
            let confirmed_at = if is_genesis {
                parsed.timestamp
            } else {
                parsed.timestamp + config.confirmation_latency_ms
            };
            order.push(parsed.id);
            txs.insert(
                parsed.id,
                LedgerTx {
                    id: parsed.id,
                    trunk: parsed.trunk,
                    branch: parsed.branch,
                    timestamp: parsed.timestamp,
                    payload,
                    confirmed_at,
                },
            );
        }
        if order.is_empty() {
            return Err(LedgerError::MalformedDump {
                line: 0,
                reason: "dump contains no transactions".into(),
            });
        }
        let mut referenced: BTreeMap<Digest, ()> = BTreeMap::new();
        for tx in txs.values() {
            referenced.insert(tx.trunk, ());
            referenced.insert(tx.branch, ());
        }
        let tips: Vec<Digest> = order
            .iter()
            .copied()
            .filter(|id| !referenced.contains_key(id))
            .collect();
        Ok(Tangle {
            clock,
            config,
            state: Mutex::new(TangleState {
                txs,
                order,
                tips,
                by_address: BTreeMap::new(),
                rng: ChaCha12Rng::seed_from_u64(config.tip_seed),
            }),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DumpLine {
    id: Digest,
    trunk: Digest,
    branch: Digest,
    timestamp: u64,
    payload_base64: String,
}

fn select_tips(rng: &mut ChaCha12Rng, tips: &[Digest]) -> (Digest, Digest) {
    debug_assert!(!tips.is_empty(), "tip set never empties");
    if tips.len() == 1 {
        return (tips[0], tips[0]);
    }
    let i = rng.random_range(0..tips.len());
    let mut j = rng.random_range(0..tips.len() - 1);
    if j >= i {
        j += 1;
    }
    (tips[i], tips[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> Tangle {
        Tangle::new(SimClock::new(), LedgerConfig::default())
    }

    /// Independent graph check: parents exist, appear strictly earlier in
    /// attach order (which rules out cycles), genesis is unique, and the
    /// tip set is exactly the unreferenced transactions.
    fn assert_valid_dag(t: &Tangle) {
        let txs = t.all_txs();
        let mut seen: BTreeMap<Digest, usize> = BTreeMap::new();
        for (pos, tx) in txs.iter().enumerate() {
            if pos == 0 {
                assert_eq!(tx.trunk, Digest::ZERO);
                assert_eq!(tx.branch, Digest::ZERO);
            } else {
                for parent in [tx.trunk, tx.branch] {
                    let parent_pos = seen
                        .get(&parent)
                        .unwrap_or_else(|| panic!("missing parent {parent}"));
                    assert!(*parent_pos < pos, "parent attached after child");
                }
            }
            assert_eq!(
                tx.id,
                LedgerTx::compute_id(&tx.trunk, &tx.branch, tx.timestamp, &tx.payload)
            );
            seen.insert(tx.id, pos);
        }
        let mut referenced = Vec::new();
        for tx in &txs {
            referenced.push(tx.trunk);
            referenced.push(tx.branch);
        }
        let mut expected_tips: Vec<Digest> = txs
            .iter()
            .map(|tx| tx.id)
            .filter(|id| !referenced.contains(id))
            .collect();
        let mut actual_tips = t.tips();
        expected_tips.sort();
        actual_tips.sort();
        assert_eq!(actual_tips, expected_tips);
        assert!(!actual_tips.is_empty());
    }

    #[test]
    fn first_attach_references_genesis_twice() {
        let t = ledger();
        let id = t.attach(b"hello".to_vec()).unwrap();
        let tx = t.transaction(&id).unwrap();
        assert_eq!(tx.trunk, t.genesis_id());
        assert_eq!(tx.branch, t.genesis_id());
    }

    #[test]
    fn payload_over_capacity_is_rejected() {
        let t = ledger();
        let err = t.attach(vec![0u8; CHUNK_CAPACITY + 1]).unwrap_err();
        assert!(matches!(
            err,
            LedgerError::PayloadTooLarge { len, capacity }
                if len == CHUNK_CAPACITY + 1 && capacity == CHUNK_CAPACITY
        ));
        assert!(t.attach(vec![0u8; CHUNK_CAPACITY]).is_ok());
    }

    #[test]
    fn hundred_attaches_keep_dag_valid() {
        let clock = SimClock::new();
        let t = Tangle::new(clock.clone(), LedgerConfig::default());
        for i in 0..100u32 {
            t.attach(i.to_be_bytes().to_vec()).unwrap();
            clock.advance_ms(250);
        }
        assert_eq!(t.len(), 101);
        assert_valid_dag(&t);
    }

    #[test]
    fn same_seed_gives_identical_graphs() {
        let build = || {
            let clock = SimClock::new();
            let t = Tangle::new(clock.clone(), LedgerConfig::default());
            for i in 0..50u32 {
                t.attach(i.to_be_bytes().to_vec()).unwrap();
                clock.advance_ms(100);
            }
            t.all_txs()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn confirmation_follows_the_clock() {
        let clock = SimClock::new();
        let t = Tangle::new(clock.clone(), LedgerConfig::default());
        let id = t.attach(b"x".to_vec()).unwrap();
        assert_eq!(t.is_confirmed(&id), Some(false));
        clock.advance_ms(DEFAULT_CONFIRMATION_LATENCY_MS - 1);
        assert_eq!(t.is_confirmed(&id), Some(false));
        clock.advance_ms(1);
        assert_eq!(t.is_confirmed(&id), Some(true));
        let tx = t.transaction(&id).unwrap();
        assert_eq!(tx.confirmed_at, tx.timestamp + DEFAULT_CONFIRMATION_LATENCY_MS);
    }

    #[test]
    fn address_index_preserves_attach_order() {
        let t = ledger();
        let addr = crate::crypto::hash(b"addr");
        t.attach_at(addr, b"one".to_vec()).unwrap();
        t.attach_at(addr, b"two".to_vec()).unwrap();
        t.attach(b"unrelated".to_vec()).unwrap();
        let payloads: Vec<Vec<u8>> =
            t.txs_at(&addr).into_iter().map(|tx| tx.payload).collect();
        assert_eq!(payloads, vec![b"one".to_vec(), b"two".to_vec()]);
        assert!(t.txs_at(&crate::crypto::hash(b"other")).is_empty());
    }

    #[test]
    fn dump_load_round_trip_preserves_graph() {
        let clock = SimClock::new();
        let t = Tangle::new(clock.clone(), LedgerConfig::default());
        for i in 0..20u32 {
            t.attach(format!("payload-{i}").into_bytes()).unwrap();
            clock.advance_ms(1000);
        }
        let mut buf = Vec::new();
        t.dump(&mut buf).unwrap();

        let loaded = Tangle::load(
            SimClock::starting_at(clock.now_ms()),
            LedgerConfig::default(),
            buf.as_slice(),
        )
        .unwrap();
        assert_eq!(loaded.all_txs(), t.all_txs());
        let mut a = loaded.tips();
        let mut b = t.tips();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_valid_dag(&loaded);
    }

    #[test]
    fn dump_lines_use_canonical_field_order() {
        let t = ledger();
        t.attach(b"z".to_vec()).unwrap();
        let mut buf = Vec::new();
        t.dump(&mut buf).unwrap();
        let first = String::from_utf8(buf).unwrap();
        let first = first.lines().next().unwrap().to_string();
        let id_pos = first.find("\"id\"").unwrap();
        let trunk_pos = first.find("\"trunk\"").unwrap();
        let branch_pos = first.find("\"branch\"").unwrap();
        let ts_pos = first.find("\"timestamp\"").unwrap();
        let payload_pos = first.find("\"payload_base64\"").unwrap();
        assert!(id_pos < trunk_pos && trunk_pos < branch_pos);
        assert!(branch_pos < ts_pos && ts_pos < payload_pos);
    }

    #[test]
    fn load_rejects_tampered_dump() {
        let t = ledger();
        t.attach(b"data".to_vec()).unwrap();
        let mut buf = Vec::new();
        t.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let forged = text.replacen("\"timestamp\":0", "\"timestamp\":9", 1);
        assert_ne!(forged, text);
        let err = Tangle::load(SimClock::new(), LedgerConfig::default(), forged.as_bytes())
            .unwrap_err();
        assert!(matches!(err, LedgerError::MalformedDump { .. }));
    }

    #[test]
    fn tampering_flips_payload_in_place() {
        let t = ledger();
        let id = t.attach(b"abc".to_vec()).unwrap();
        t.tamper_payload(&id, 1).unwrap();
        assert_eq!(t.transaction(&id).unwrap().payload, b"acc".to_vec());
        assert!(t.tamper_payload(&crate::crypto::hash(b"nope"), 0).is_err());
    }
}
